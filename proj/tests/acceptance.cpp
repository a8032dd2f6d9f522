// Acceptance suite: runs the verification criteria A1..A10 and prints one
// PASS/FAIL line per criterion. With arguments, runs only the named
// criteria (e.g. ./acceptance A3 A7). Exit code 0 iff everything passed.

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#include "difflab/checks.hpp"

int main(int argc, char** argv) {
    using namespace difflab::checks;
    std::vector<std::string> wanted;
    for (int i = 1; i < argc; ++i) wanted.emplace_back(argv[i]);

    bool all_pass = true;
    for (const CheckEntry& entry : registry()) {
        if (!wanted.empty()) {
            bool found = false;
            for (const auto& w : wanted) found = found || w == entry.id;
            if (!found) continue;
        }
        CheckResult r;
        try {
            r = entry.fn(0);
        } catch (const std::exception& e) {
            r = {entry.id, "criterion aborted", false, e.what()};
        }
        std::printf("%-4s %s  %s (%s)\n", r.id.c_str(), r.pass ? "PASS" : "FAIL",
                    r.title.c_str(), r.detail.c_str());
        std::fflush(stdout);
        all_pass = all_pass && r.pass;
    }
    return all_pass ? 0 : 1;
}
