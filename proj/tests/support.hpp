#pragma once

// Helpers shared by the test programs.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dynwin/category.hpp"
#include "dynwin/numerics.hpp"

namespace dynwin::test_support {

// Random category tree of depth at most `depth` (an atom has depth 0).
inline Category random_category(Rng& rng, std::size_t depth) {
  static const std::vector<std::pair<std::string, std::string>> atoms = {
      {"N", ""},  {"NP", ""},  {"PP", ""},    {"S", ""},  {"S", "dcl"},
      {"S", "ng"}, {"NP", "nb"}, {"conj", ""}, {",", ""}, {"N", "num"}};
  if (depth == 0 || rng.bernoulli(0.3)) {
    const auto& [name, feature] = atoms[rng.index(atoms.size())];
    return Category::atom(name, feature);
  }
  Category result = random_category(rng, depth - 1);
  Category argument = random_category(rng, depth - 1);
  return rng.bernoulli(0.5) ? Category::forward(std::move(result), std::move(argument))
                            : Category::backward(std::move(result), std::move(argument));
}

inline std::size_t category_depth(const Category& c) {
  if (c.is_atom()) return 0;
  return 1 + std::max(category_depth(c.result()), category_depth(c.argument()));
}

// Fresh, empty directory under the system temp directory.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("dynwin_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace dynwin::test_support
