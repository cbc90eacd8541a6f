// Writes a synthetic bundle with planted outlier dimensions.

#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "odtk/bundle.hpp"
#include "odtk/synthetic.hpp"

int main(int argc, char **argv) {
  std::string out;
  std::string kind = "toy";
  std::uint64_t seed = 0;
  CLI::App app{"Write a synthetic bundle with planted outlier dimensions."};
  app.add_option("out", out, "output directory")->required();
  app.add_option("--kind", kind, "toy | planted")->check(CLI::IsMember({"toy", "planted"}))->capture_default_str();
  app.add_option("--seed", seed, "generator seed (0 keeps the preset)");
  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = kind == "toy" ? odtk::synthetic::toy_config() : odtk::synthetic::Config{};
    if (seed) cfg.seed = seed;
    const auto planted = odtk::synthetic::make_planted(cfg);
    odtk::save_bundle(planted.bundle, out);
    std::cout << out << ": N=" << planted.bundle.n() << " d=" << planted.bundle.d()
              << " V=" << planted.bundle.v() << " planted=";
    for (auto j : planted.dims) std::cout << j << " ";
    std::cout << "\n";
  } catch (const odtk::Error &e) {
    std::cerr << "make_toy_bundle: " << e.what() << "\n";
    return odtk::exit_code(e.kind());
  }
  return 0;
}
