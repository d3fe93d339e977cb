#pragma once

// Deterministic synthetic fixtures behind the bundled dataset names. The
// generators are exposed so experiments can draw fresh seeds.

#include <cstdint>
#include <string>
#include <vector>

#include "easynlp/data.hpp"

namespace easynlp {

inline constexpr std::uint64_t kToyWorldSeed = 2024;

struct ClozeProbe {
  std::string sentence;  // contains one literal [MASK]
  std::string gold;
};

/// A small world of people, cities and jobs. Frequent people appear
/// throughout the corpus with both facts stated. Rare people come in two
/// groups of 25 with one triple each: anchors, whose fact is also stated in
/// anchor_mentions sentences, and probe subjects, mentioned in probe_mentions
/// sentences that do not give their fact away. The probes ask the probe
/// subjects' facts. longtail_entities lists probe subjects first (aligned
/// with probes), then anchors.
struct KnowledgeWorld {
  std::vector<std::string> corpus;
  std::vector<Triple> triples;  // rare people only, 50 in all
  std::vector<ClozeProbe> probes;
  std::vector<std::string> longtail_entities;
  std::vector<std::string> frequent_entities;
};

KnowledgeWorld make_knowledge_world(std::uint64_t seed, std::size_t corpus_size, std::size_t anchor_mentions = 16,
                                    std::size_t probe_mentions = 4, std::size_t frequent_people = 25);

/// Topic headlines, label "0" sports / "1" finance. Schema sent,label.
std::vector<Record> make_topic_records(std::uint64_t seed, std::size_t n);

/// Headline pairs, label "1" when both share a topic. Schema s1,s2,label.
std::vector<Record> make_match_records(std::uint64_t seed, std::size_t n);

/// Product reviews from two domains (0 books, 1 electronics), label "1"
/// positive / "0" negative. Sentiment words are partly shared across
/// domains and partly domain specific. Schema sent,label,domain.
std::vector<Record> make_multidomain_records(std::uint64_t seed, std::size_t n_domain0, std::size_t n_domain1);

}  // namespace easynlp
