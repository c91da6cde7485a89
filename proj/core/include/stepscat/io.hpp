#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "stepscat/potential.hpp"
#include "stepscat/spectral.hpp"

namespace stepscat {

/// {"a_minus": r, "a_plus": r, "deviation": {"kind": "none" | "square" | "gaussian" |
/// "exp_tail" | "tabulated", ...}}. Parameter names follow the deviation structs
/// (tabulated uses "x" and "values"). Throws InvalidInput on malformed input.
Potential potential_from_json(std::string_view text);
std::string potential_to_json(const Potential& p);

/// Scattering data as JSON; reals are written with 17 significant digits.
std::string scattering_data_to_json(const ScatteringData& d);
ScatteringData scattering_data_from_json(std::string_view text);

/// "mu,band,S_re_11,S_im_11,S_re_12,S_im_12,S_re_21,S_im_21,S_re_22,S_im_22" with one row
/// per sample, 15 significant digits; entries absent from a 1x1 sample are left empty.
/// Bands are numbered 1 and 2.
std::string s_table_csv(const ScatteringData& d);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace stepscat
