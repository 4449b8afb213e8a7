namespace morig {}
