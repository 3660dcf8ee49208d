#include "ght/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <map>

namespace ght {
namespace tasks {
namespace {

Dataset generate_pairs(const TaskSpec& spec, uint64_t seed, bool reverse) {
  Dataset ds;
  ds.kind = reverse ? TaskKind::Reverse : TaskKind::Copy;
  ds.vocab = spec.vocab;
  Rng rng(Rng::derive_seed(seed, "task"));
  std::vector<Sample> all;
  all.reserve(static_cast<size_t>(spec.samples));
  for (int64_t i = 0; i < spec.samples; ++i) {
    int len = static_cast<int>(rng.range(spec.min_len, spec.max_len));
    Sample s;
    s.src.resize(static_cast<size_t>(len));
    for (auto& t : s.src) t = static_cast<int32_t>(rng.range(3, spec.vocab - 1));
    s.tgt = s.src;
    if (reverse) std::reverse(s.tgt.begin(), s.tgt.end());
    all.push_back(std::move(s));
  }
  size_t n = all.size();
  size_t n_train = n * 8 / 10;
  size_t n_valid = n / 10;
  ds.train.assign(all.begin(), all.begin() + static_cast<int64_t>(n_train));
  ds.valid.assign(all.begin() + static_cast<int64_t>(n_train),
                  all.begin() + static_cast<int64_t>(n_train + n_valid));
  ds.test.assign(all.begin() + static_cast<int64_t>(n_train + n_valid), all.end());
  return ds;
}

Dataset generate_char_lm(const TaskSpec& spec, uint64_t seed) {
  std::ifstream f(spec.corpus, std::ios::binary);
  if (!f) throw IoError(strprintf("task: cannot open corpus '%s'", spec.corpus.c_str()));
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (text.size() < static_cast<size_t>(spec.max_len) * 10)
    throw ConfigError("task: corpus too small for the configured window length");

  Dataset ds;
  ds.kind = TaskKind::CharLm;
  std::map<char, int32_t> vocab_map;
  for (char c : text) vocab_map.emplace(c, 0);
  int32_t next = 3;
  ds.charset.assign(vocab_map.size(), '\0');
  for (auto& [c, id] : vocab_map) {
    id = next++;
    ds.charset[static_cast<size_t>(id - 3)] = c;
  }
  ds.vocab = next;

  int window = spec.max_len;
  size_t n_windows = text.size() / static_cast<size_t>(window);
  n_windows = std::min(n_windows, static_cast<size_t>(spec.samples));
  Rng rng(Rng::derive_seed(seed, "task"));
  std::vector<size_t> starts;
  for (size_t i = 0; i + static_cast<size_t>(window) <= text.size();
       i += static_cast<size_t>(window))
    starts.push_back(i);
  rng.shuffle(starts);
  starts.resize(std::min(starts.size(), n_windows));

  std::vector<Sample> all;
  for (size_t st : starts) {
    Sample s;
    s.tgt.resize(static_cast<size_t>(window));
    for (int j = 0; j < window; ++j)
      s.tgt[static_cast<size_t>(j)] = vocab_map[text[st + static_cast<size_t>(j)]];
    all.push_back(std::move(s));
  }
  size_t n = all.size();
  size_t n_train = n * 8 / 10;
  size_t n_valid = n / 10;
  ds.train.assign(all.begin(), all.begin() + static_cast<int64_t>(n_train));
  ds.valid.assign(all.begin() + static_cast<int64_t>(n_train),
                  all.begin() + static_cast<int64_t>(n_train + n_valid));
  ds.test.assign(all.begin() + static_cast<int64_t>(n_train + n_valid), all.end());
  return ds;
}

}  // namespace

Dataset generate_dataset(const TaskSpec& spec, uint64_t seed) {
  spec.validate();
  switch (spec.kind) {
    case TaskKind::Copy: return generate_pairs(spec, seed, false);
    case TaskKind::Reverse: return generate_pairs(spec, seed, true);
    default: return generate_char_lm(spec, seed);
  }
}

std::vector<Batch> make_batches(const std::vector<Sample>& data, int batch_size, Arch arch,
                                Rng* shuffle_rng) {
  // bucket indices by target length (src length tracks it for the pair tasks)
  std::map<size_t, std::vector<size_t>> buckets;
  for (size_t i = 0; i < data.size(); ++i) buckets[data[i].tgt.size()].push_back(i);

  std::vector<std::vector<size_t>> groups;
  for (auto& [len, idx] : buckets) {
    if (shuffle_rng) shuffle_rng->shuffle(idx);
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
      size_t end = std::min(idx.size(), at + static_cast<size_t>(batch_size));
      groups.emplace_back(idx.begin() + static_cast<int64_t>(at),
                          idx.begin() + static_cast<int64_t>(end));
    }
  }
  if (shuffle_rng) shuffle_rng->shuffle(groups);

  std::vector<Batch> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    int64_t b = static_cast<int64_t>(g.size());
    int64_t tlen = static_cast<int64_t>(data[g[0]].tgt.size()) + 1;
    Batch batch;
    if (arch == Arch::EncoderDecoder) {
      int64_t slen = static_cast<int64_t>(data[g[0]].src.size()) + 1;
      std::vector<int32_t> src(static_cast<size_t>(b * slen));
      for (int64_t i = 0; i < b; ++i) {
        const auto& s = data[g[static_cast<size_t>(i)]].src;
        std::copy(s.begin(), s.end(), src.begin() + i * slen);
        src[static_cast<size_t>(i * slen + slen - 1)] = kEos;
      }
      batch.src = IntTensor({b, slen}, std::move(src));
    }
    std::vector<int32_t> tin(static_cast<size_t>(b * tlen));
    std::vector<int32_t> tout(static_cast<size_t>(b * tlen));
    for (int64_t i = 0; i < b; ++i) {
      const auto& t = data[g[static_cast<size_t>(i)]].tgt;
      tin[static_cast<size_t>(i * tlen)] = kBos;
      std::copy(t.begin(), t.end(), tin.begin() + i * tlen + 1);
      std::copy(t.begin(), t.end(), tout.begin() + i * tlen);
      tout[static_cast<size_t>(i * tlen + tlen - 1)] = kEos;
    }
    batch.tgt_in = IntTensor({b, tlen}, std::move(tin));
    batch.tgt_out = IntTensor({b, tlen}, std::move(tout));
    out.push_back(std::move(batch));
  }
  return out;
}

}  // namespace tasks
}  // namespace ght
