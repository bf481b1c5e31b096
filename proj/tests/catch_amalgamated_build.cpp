// Builds the amalgamated Catch2 implementation (with its default main)
// exactly once; every test suite links against this object library.
#include <catch2/catch_amalgamated.cpp>
