// Regenerates tests/fixtures/linear_panel.csv and its truth record.
#include <fstream>
#include <iostream>

#include "panel_dml/simulation.hpp"

int main(int argc, char** argv) {
  if (argc != 2) {
    std::cerr << "usage: make_fixture <output directory>\n";
    return 2;
  }
  panel_dml::DgpConfig cfg;
  cfg.design = 1;
  cfg.n_units = 300;
  cfg.n_waves = 5;
  cfg.p = 5;
  cfg.seed = 20240601;
  const auto sim = panel_dml::generate_dgp(cfg);
  const std::string dir = argv[1];
  panel_dml::write_panel_csv(dir + "/linear_panel.csv", sim.panel);
  std::ofstream truth(dir + "/linear_panel.json");
  truth << nlohmann::json{{"theta", cfg.theta}, {"dgp", cfg.to_json()}}.dump(2) << "\n";
  return 0;
}
