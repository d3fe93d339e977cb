// Writes the bundled toy datasets as <dir>/<name>/<split>.tsv, the layout
// EASYNLP_TOY_DATA_DIR reads back, plus <dir>/toy-kb/kb.jsonl.

#include <filesystem>
#include <iostream>
#include <string>

#include "easynlp/data.hpp"
#include "easynlp/errors.hpp"
#include "easynlp/model.hpp"

namespace fs = std::filesystem;
using namespace easynlp;

int main(int argc, char** argv) {
  if (argc != 2 || argv[1][0] == '-') {
    std::cerr << "usage: easynlp_toydata <output dir>\n";
    return argc == 2 && std::string(argv[1]) == "--help" ? 0 : 2;
  }
  const fs::path root = argv[1];
  try {
    for (const auto& name : dataset_names()) {
      fs::create_directories(root / name);
      for (const auto& split : dataset_splits(name)) {
        const auto ds = load_dataset(name, split);
        write_table(root / name / (split + ".tsv"), ds.records, ds.schema);
        std::cout << (root / name / (split + ".tsv")).string() << "  " << ds.records.size() << " rows  "
                  << ds.schema.to_string() << "\n";
      }
    }
    std::vector<Triple> triples;
    for (const auto& r : load_dataset("toy-kb").records) triples.push_back({r.text("head"), r.text("relation"), r.text("tail")});
    write_file_atomic(root / "toy-kb" / "kb.jsonl", format_triples(triples));
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
