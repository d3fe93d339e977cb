#include "easynlp/toydata.hpp"

#include <array>

#include "easynlp/rng.hpp"

namespace easynlp {

namespace {

template <std::size_t N>
const char* pick(const std::array<const char*, N>& words, Rng& rng) {
  return words[rng.uniform_int(N)];
}

std::string fill_template(std::string tmpl, const std::string& entity, const std::string& tail) {
  auto replace = [&](const std::string& key, const std::string& value) {
    if (auto pos = tmpl.find(key); pos != std::string::npos) tmpl.replace(pos, key.size(), value);
  };
  replace("{e}", entity);
  replace("{t}", tail);
  return tmpl;
}

// Made-up names: consonant-vowel syllables, so they never collide with the
// template, city or job words.
std::vector<std::string> person_names(std::size_t count) {
  static constexpr std::array<const char*, 12> kSyllables = {"ka", "lo", "mi", "ru", "se", "ta",
                                                             "vo", "ne", "di", "po", "bu", "ge"};
  std::vector<std::string> names;
  for (std::size_t i = 0; names.size() < count; ++i) {
    std::string name;
    for (std::size_t k = i, digits = 0; digits < 3; ++digits, k /= kSyllables.size()) name += kSyllables[k % kSyllables.size()];
    names.push_back(name);
  }
  return names;
}

constexpr std::array<const char*, 25> kCities = {
    "paris", "london", "berlin", "madrid", "rome", "vienna", "prague", "lisbon", "dublin", "oslo",
    "warsaw", "athens", "cairo", "lima", "tokyo", "seoul", "delhi", "sydney", "toronto", "boston",
    "chicago", "denver", "dallas", "miami", "quito"};
constexpr std::array<const char*, 25> kJobs = {
    "teacher", "doctor", "lawyer", "farmer", "painter", "singer", "pilot", "nurse", "baker", "chef",
    "writer", "dancer", "sailor", "soldier", "banker", "plumber", "dentist", "actor", "poet", "tailor",
    "miner", "judge", "barber", "builder", "florist"};

constexpr std::array<const char*, 3> kBornTemplates = {"{e} was born in {t} .", "{e} is from {t} .",
                                                       "{e} grew up in {t} ."};
constexpr std::array<const char*, 3> kJobTemplates = {"{e} works as a {t} .", "{e} is a {t} .",
                                                      "{e} earns a living as a {t} ."};
constexpr std::array<const char*, 4> kNeutralTemplates = {"{e} met a friend .", "people say {e} is kind .",
                                                          "{e} went home early .", "we saw {e} yesterday ."};
constexpr const char* kBornProbe = "{e} was born in [MASK] .";
constexpr const char* kJobProbe = "{e} works as a [MASK] .";

}  // namespace

KnowledgeWorld make_knowledge_world(std::uint64_t seed, std::size_t corpus_size, std::size_t anchor_mentions,
                                    std::size_t probe_mentions, std::size_t frequent_people) {
  Rng rng(seed);
  KnowledgeWorld w;
  const std::size_t n = kCities.size();
  const auto names = person_names(2 * n + frequent_people);

  // Frequent people cycle through every city and every job, so all probe
  // answers occur in the corpus.
  std::vector<std::size_t> city_perm(n), job_perm(n);
  for (std::size_t i = 0; i < n; ++i) city_perm[i] = job_perm[i] = i;
  shuffle(city_perm.begin(), city_perm.end(), rng);
  shuffle(job_perm.begin(), job_perm.end(), rng);
  std::vector<std::pair<std::string, std::string>> frequent_facts;
  for (std::size_t i = 0; i < frequent_people; ++i) {
    w.frequent_entities.push_back(names[2 * n + i]);
    frequent_facts.emplace_back(kCities[city_perm[i % n]], kJobs[job_perm[(i + i / n) % n]]);
  }

  // Probe people: one fact each that only the triples hold; the corpus
  // mentions them in sentences that say nothing about it. Answers are
  // distinct across people.
  std::vector<std::size_t> hidden(n);
  for (std::size_t i = 0; i < n; ++i) hidden[i] = i;
  shuffle(hidden.begin(), hidden.end(), rng);
  std::vector<std::string> sentences;
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& e = names[i];
    w.longtail_entities.push_back(e);
    const bool job = i % 2 == 1;
    const std::string tail = job ? kJobs[hidden[i]] : kCities[hidden[i]];
    w.triples.push_back({e, job ? "works_as" : "born_in", tail});
    for (std::size_t k = 0; k < probe_mentions; ++k) sentences.push_back(fill_template(pick(kNeutralTemplates, rng), e, ""));
    w.probes.push_back({fill_template(job ? kJobProbe : kBornProbe, e, ""), tail});
  }

  // Anchor people: rare too, one fact each, stated in the corpus and also
  // listed in the triples.
  for (std::size_t i = 0; i < n; ++i) {
    const std::string& e = names[n + i];
    w.longtail_entities.push_back(e);
    const bool job = i % 2 == 1;
    const std::string tail = job ? kJobs[rng.uniform_int(n)] : kCities[rng.uniform_int(n)];
    w.triples.push_back({e, job ? "works_as" : "born_in", tail});
    for (std::size_t k = 0; k < anchor_mentions; ++k)
      sentences.push_back(fill_template(job ? pick(kJobTemplates, rng) : pick(kBornTemplates, rng), e, tail));
  }

  while (sentences.size() < corpus_size) {
    const auto idx = rng.uniform_int(frequent_people);
    const auto& [city, job] = frequent_facts[idx];
    if (rng.uniform() < 0.5) {
      sentences.push_back(fill_template(pick(kBornTemplates, rng), w.frequent_entities[idx], city));
    } else {
      sentences.push_back(fill_template(pick(kJobTemplates, rng), w.frequent_entities[idx], job));
    }
  }
  shuffle(sentences.begin(), sentences.end(), rng);
  w.corpus = std::move(sentences);
  return w;
}

namespace {

constexpr std::array<const char*, 8> kSports = {"match", "goal", "team", "coach", "league", "striker", "season", "stadium"};
constexpr std::array<const char*, 8> kFinance = {"stock", "market", "bank", "profit", "shares", "investor", "price", "trade"};
constexpr std::array<const char*, 10> kHeadlineFiller = {"the", "a", "today", "report", "says", "new", "big", "after", "week", "local"};

std::string headline(int topic, Rng& rng) {
  std::vector<std::string> words;
  for (int i = 0; i < 2; ++i) words.emplace_back(topic == 0 ? pick(kSports, rng) : pick(kFinance, rng));
  for (int i = 0; i < 3; ++i) words.emplace_back(pick(kHeadlineFiller, rng));
  shuffle(words.begin(), words.end(), rng);
  std::string s;
  for (const auto& word : words) s += (s.empty() ? "" : " ") + word;
  return s;
}

}  // namespace

std::vector<Record> make_topic_records(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Record> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int topic = static_cast<int>(i % 2);
    out.push_back(Record{{{"sent", {headline(topic, rng)}}, {"label", {std::to_string(topic)}}}});
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

std::vector<Record> make_match_records(std::uint64_t seed, std::size_t n) {
  Rng rng(seed);
  std::vector<Record> out;
  for (std::size_t i = 0; i < n; ++i) {
    const int same = static_cast<int>(i % 2);
    const int t1 = static_cast<int>(rng.uniform_int(2));
    const int t2 = same ? t1 : 1 - t1;
    out.push_back(Record{{{"s1", {headline(t1, rng)}}, {"s2", {headline(t2, rng)}}, {"label", {std::to_string(same)}}}});
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

namespace {

constexpr std::array<const char*, 4> kSharedPositive = {"good", "great", "excellent", "lovely"};
constexpr std::array<const char*, 4> kSharedNegative = {"bad", "poor", "awful", "terrible"};
constexpr std::array<std::array<const char*, 3>, 2> kDomainPositive = {{{"gripping", "moving", "witty"}, {"durable", "fast", "sturdy"}}};
constexpr std::array<std::array<const char*, 3>, 2> kDomainNegative = {{{"boring", "dull", "tedious"}, {"flimsy", "slow", "buggy"}}};
constexpr std::array<std::array<const char*, 5>, 2> kNouns = {
    {{"novel", "story", "author", "plot", "chapter"}, {"phone", "battery", "screen", "cable", "charger"}}};
constexpr std::array<const char*, 6> kReviewFiller = {"the", "this", "was", "really", "quite", "i"};

std::string review(int domain, int label, Rng& rng) {
  std::vector<std::string> words;
  words.emplace_back(pick(kNouns[static_cast<std::size_t>(domain)], rng));
  // two opinion words of the same polarity, each shared or domain specific
  for (int i = 0; i < 2; ++i) {
    if (rng.uniform() < 0.5) {
      words.emplace_back(label == 1 ? pick(kSharedPositive, rng) : pick(kSharedNegative, rng));
    } else {
      words.emplace_back(label == 1 ? pick(kDomainPositive[static_cast<std::size_t>(domain)], rng)
                                    : pick(kDomainNegative[static_cast<std::size_t>(domain)], rng));
    }
  }
  for (int i = 0; i < 2; ++i) words.emplace_back(pick(kReviewFiller, rng));
  shuffle(words.begin(), words.end(), rng);
  std::string s;
  for (const auto& word : words) s += (s.empty() ? "" : " ") + word;
  return s;
}

}  // namespace

std::vector<Record> make_multidomain_records(std::uint64_t seed, std::size_t n_domain0, std::size_t n_domain1) {
  Rng rng(seed);
  std::vector<Record> out;
  for (int domain = 0; domain < 2; ++domain) {
    const std::size_t n = domain == 0 ? n_domain0 : n_domain1;
    for (std::size_t i = 0; i < n; ++i) {
      const int label = static_cast<int>(i % 2);
      out.push_back(Record{{{"sent", {review(domain, label, rng)}},
                            {"label", {std::to_string(label)}},
                            {"domain", {static_cast<std::int64_t>(domain)}}}});
    }
  }
  shuffle(out.begin(), out.end(), rng);
  return out;
}

}  // namespace easynlp
