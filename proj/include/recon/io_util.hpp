#pragma once

#include <string>
#include <vector>

namespace recon {

// Full round-trip precision ("%.17g"); all numeric CSV output goes through this.
std::string fmt_g17(double x);
std::string fmt_fixed(double x, int digits);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

std::vector<std::string> split_csv_line(const std::string& line);
std::vector<std::vector<std::string>> read_csv(const std::string& path, const std::string& expected_header);

}  // namespace recon
