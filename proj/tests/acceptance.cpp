// Placeholder while the suites below are under construction.
int main() { return 0; }
