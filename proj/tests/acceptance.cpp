// Runs every acceptance criterion; exits nonzero if any fails.
#include <iostream>

#include "concrete/acceptance.hpp"

int main() { return concrete::run_acceptance(std::cout).all_passed() ? 0 : 1; }
