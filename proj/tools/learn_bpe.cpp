// Learns a BPE merge table from a text corpus.
//   learn_bpe --corpus data/corpus.txt --merges 1000 --min-count 1 --out data/bpe_merges.txt
#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "vltd/tokenizer.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Learn a BPE merge table"};
  std::string corpus, out;
  int merges = 1000;
  int64_t min_count = 2;
  app.add_option("--corpus", corpus, "UTF-8 text file")->required()->check(CLI::ExistingFile);
  app.add_option("--merges", merges, "maximum number of merges");
  app.add_option("--min-count", min_count, "stop when the best pair is rarer than this");
  app.add_option("--out", out, "output merge table")->required();
  CLI11_PARSE(app, argc, argv);

  std::ifstream in(corpus);
  std::stringstream buf;
  buf << in.rdbuf();
  std::map<std::string, int64_t> counts;
  for (const auto& w : vltd::pretokenize(buf.str())) ++counts[w];
  const auto rules = vltd::learn_merges(counts, merges, min_count);
  std::ofstream(out) << vltd::format_merges(rules);
  std::cerr << "learned " << rules.size() << " merges from " << counts.size() << " distinct words\n";
  return 0;
}
