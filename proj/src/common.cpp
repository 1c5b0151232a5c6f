#include "smokenet/common.hpp"

#include <cstdio>
#include <fstream>

namespace smokenet {

void warn(const std::string& msg) { std::fprintf(stderr, "[warn] %s\n", msg.c_str()); }

std::string cpu_model_name() {
    std::ifstream f("/proc/cpuinfo");
    std::string line;
    while (std::getline(f, line)) {
        if (line.rfind("model name", 0) == 0) {
            const auto pos = line.find(": ");
            if (pos != std::string::npos) {
                return line.substr(pos + 2);
            }
        }
    }
    return "unknown-cpu";
}

}  // namespace smokenet
