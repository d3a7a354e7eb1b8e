#pragma once
#include <string>

#include "network.hpp"
#include "textfile.hpp"

namespace dsopt {

// Reads a feeder description. Sections: [network], [upstream], [load_mix],
// [buses], [lines], plus one [transformer] / [capacitor] / [device] section
// per element. All quantities per unit on the system base.
Network load_network(const std::string& path);
Network network_from_text(const TextFile& file);

}  // namespace dsopt
