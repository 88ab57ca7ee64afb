#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>

#include "CLI11.hpp"
#include "sdlstm/textgen.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Deterministic synthetic text corpus generator"};
  std::size_t bytes = 1u << 20;
  std::uint64_t seed = 1;
  std::string out_path;
  app.add_option("--bytes", bytes, "Target size; generation stops at the next sentence boundary")
      ->capture_default_str();
  app.add_option("--seed", seed, "Seed")->capture_default_str();
  app.add_option("--out", out_path, "Output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  const std::string text = sdlstm::generate_text(bytes, seed);
  std::ofstream out(out_path, std::ios::binary);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) {
    std::fprintf(stderr, "io error: cannot write %s\n", out_path.c_str());
    return 3;
  }
  std::printf("wrote %zu bytes to %s\n", text.size(), out_path.c_str());
  return 0;
}
