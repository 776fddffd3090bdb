#include "instsel/app.hpp"

int main(int argc, char** argv) { return instsel::cli::run(argc, argv); }
