// Placeholder main; the real CLI is wired up once the scenario layer exists.
int main() { return 0; }
