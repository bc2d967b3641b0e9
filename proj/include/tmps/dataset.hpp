#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tmps/rng.hpp"
#include "tmps/util.hpp"

namespace tmps {

enum class Domain { Source, Target };

inline char domain_code(Domain d) { return d == Domain::Source ? 'S' : 'T'; }

struct Sample {
  std::uint64_t id = 0;  // unique within a dataset; identity for leakage checks
  int label = 0;         // dense, 0..num_classes-1
  Domain domain = Domain::Source;
  std::vector<double> features;
};

inline bool operator==(const Sample& a, const Sample& b) {
  return a.id == b.id && a.label == b.label && a.domain == b.domain && a.features == b.features;
}

// Samples grouped by class: pools[c] holds every sample with label c.
using ClassPools = std::vector<std::vector<Sample>>;

// A dataset as loaded or generated, before the target side is divided into
// an adaptation pool and a held-out evaluation pool.
struct RawDataset {
  int num_classes = 0;
  int dim = 0;
  ClassPools source;
  ClassPools target;
};

// Training-ready view: the target pool has been split into a small per-class
// adaptation pool (target_train) and the remainder held out for evaluation.
struct DomainDataset {
  int num_classes = 0;
  int dim = 0;
  ClassPools source_pool;
  ClassPools target_train_pool;
  ClassPools target_eval_pool;
};

struct ClassCount {
  int source = 0;
  int target_train = 0;
  int target_eval = 0;
};

namespace detail {

inline void check_pool_shape(const ClassPools& pools, int num_classes, int dim,
                             const char* pool_name) {
  if (static_cast<int>(pools.size()) != num_classes)
    throw std::invalid_argument(std::string(pool_name) + ": expected " +
                                std::to_string(num_classes) + " classes, got " +
                                std::to_string(pools.size()));
  for (int c = 0; c < num_classes; ++c)
    for (const Sample& s : pools[c]) {
      if (s.label != c)
        throw std::invalid_argument(std::string(pool_name) + ": sample id " +
                                    std::to_string(s.id) + " has label " +
                                    std::to_string(s.label) + " but sits in class " +
                                    std::to_string(c));
      if (static_cast<int>(s.features.size()) != dim)
        throw std::invalid_argument(std::string(pool_name) + ": sample id " +
                                    std::to_string(s.id) + " has " +
                                    std::to_string(s.features.size()) + " features, expected " +
                                    std::to_string(dim));
    }
}

}  // namespace detail

// A labeled vector as it arrives from outside, before label normalization.
struct IngestRow {
  int label = 0;  // arbitrary int; remapped to a dense index
  Domain domain = Domain::Source;
  std::vector<double> features;
};

// Builds a RawDataset from loose rows. Distinct labels are sorted and
// remapped to 0..c-1, so callers may use any integer labels. Sample ids are
// assigned in input order starting at 0. Every class must appear in the
// source domain; feature dimensions must agree across rows.
inline RawDataset ingest_samples(const std::vector<IngestRow>& rows) {
  if (rows.empty()) throw std::invalid_argument("ingest_samples: no rows");
  const int dim = static_cast<int>(rows[0].features.size());
  if (dim < 1) throw std::invalid_argument("ingest_samples: zero-dimensional features");
  std::set<int> labels;
  for (const IngestRow& r : rows) {
    if (static_cast<int>(r.features.size()) != dim)
      throw std::invalid_argument("ingest_samples: inconsistent feature dimension (" +
                                  std::to_string(r.features.size()) + " vs " +
                                  std::to_string(dim) + ")");
    labels.insert(r.label);
  }
  std::map<int, int> dense;
  int next = 0;
  for (int l : labels) dense[l] = next++;

  RawDataset ds;
  ds.num_classes = next;
  ds.dim = dim;
  ds.source.resize(next);
  ds.target.resize(next);
  std::uint64_t id = 0;
  for (const IngestRow& r : rows) {
    Sample s;
    s.id = id++;
    s.label = dense.at(r.label);
    s.domain = r.domain;
    s.features = r.features;
    (r.domain == Domain::Source ? ds.source : ds.target)[s.label].push_back(std::move(s));
  }
  for (int c = 0; c < next; ++c)
    if (ds.source[c].empty())
      throw std::invalid_argument("ingest_samples: class " + std::to_string(c) +
                                  " has no source samples");
  return ds;
}

// Splits each target class pool into k adaptation samples and the rest for
// evaluation. Uses a partial Fisher-Yates shuffle per class over one stream
// seeded with `seed`; classes are processed in index order, so the draw
// sequence is a deterministic function of (pool sizes, k, seed). Requires
// at least k+1 target samples per class so the evaluation side is nonempty.
inline std::pair<ClassPools, ClassPools> split_target(const ClassPools& target, int k,
                                                      std::uint64_t seed) {
  if (k < 0) throw std::invalid_argument("split_target: k must be >= 0");
  Rng rng(seed);
  ClassPools train(target.size());
  ClassPools eval(target.size());
  for (std::size_t c = 0; c < target.size(); ++c) {
    const std::vector<Sample>& pool = target[c];
    const int n = static_cast<int>(pool.size());
    if (n < k + 1)
      throw std::invalid_argument("split_target: class " + std::to_string(c) + " has " +
                                  std::to_string(n) + " target samples, need at least " +
                                  std::to_string(k + 1));
    std::vector<int> idx(pool.size());
    for (int i = 0; i < n; ++i) idx[i] = i;
    // Only the first k positions need shuffling; the tail is the eval set.
    for (int i = 0; i < k; ++i) {
      const std::size_t j = i + rng.uniform_index(static_cast<std::size_t>(n - i));
      std::swap(idx[i], idx[j]);
    }
    train[c].reserve(k);
    eval[c].reserve(n - k);
    for (int i = 0; i < k; ++i) train[c].push_back(pool[idx[i]]);
    std::vector<int> rest(idx.begin() + k, idx.end());
    std::sort(rest.begin(), rest.end());  // keep eval in original pool order
    for (int i : rest) eval[c].push_back(pool[i]);
  }
  return {std::move(train), std::move(eval)};
}

// Validates a raw dataset and splits its target side.
inline DomainDataset build_dataset(const RawDataset& raw, int k, std::uint64_t split_seed) {
  if (raw.num_classes < 2) throw std::invalid_argument("build_dataset: need at least 2 classes");
  if (raw.dim < 1) throw std::invalid_argument("build_dataset: need at least 1 feature dim");
  detail::check_pool_shape(raw.source, raw.num_classes, raw.dim, "source pool");
  detail::check_pool_shape(raw.target, raw.num_classes, raw.dim, "target pool");
  for (int c = 0; c < raw.num_classes; ++c)
    if (raw.source[c].empty())
      throw std::invalid_argument("build_dataset: class " + std::to_string(c) +
                                  " has no source samples");
  DomainDataset ds;
  ds.num_classes = raw.num_classes;
  ds.dim = raw.dim;
  ds.source_pool = raw.source;
  auto split = split_target(raw.target, k, split_seed);
  ds.target_train_pool = std::move(split.first);
  ds.target_eval_pool = std::move(split.second);
  return ds;
}

inline std::vector<ClassCount> class_counts(const DomainDataset& ds) {
  std::vector<ClassCount> out(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) {
    out[c].source = static_cast<int>(ds.source_pool[c].size());
    out[c].target_train = static_cast<int>(ds.target_train_pool[c].size());
    out[c].target_eval = static_cast<int>(ds.target_eval_pool[c].size());
  }
  return out;
}

// Undoes a split: merges target_train and target_eval back per class,
// ordered by sample id so the result matches the pre-split pool order.
inline RawDataset to_raw(const DomainDataset& ds) {
  RawDataset raw;
  raw.num_classes = ds.num_classes;
  raw.dim = ds.dim;
  raw.source = ds.source_pool;
  raw.target.resize(ds.num_classes);
  for (int c = 0; c < ds.num_classes; ++c) {
    raw.target[c] = ds.target_train_pool[c];
    raw.target[c].insert(raw.target[c].end(), ds.target_eval_pool[c].begin(),
                         ds.target_eval_pool[c].end());
    std::sort(raw.target[c].begin(), raw.target[c].end(),
              [](const Sample& a, const Sample& b) { return a.id < b.id; });
  }
  return raw;
}

// --- dataset file format -------------------------------------------------
//
//   tmps-dataset v1,dim=<D>,classes=<c>
//   # optional comment lines
//   S,<label>,<f0>,...,<fD-1>
//   T,<label>,...
//
// Features are written with 17 significant digits so write -> read is
// bit-exact. Rows are emitted source pool first, then target, each in class
// order; within a class, in pool order. Readers assign sample ids by row
// order, so a file written by write_dataset_csv loads back identical.

inline std::string dataset_to_csv(const RawDataset& ds,
                                  const std::vector<std::string>& comments = {}) {
  std::ostringstream out;
  out << "tmps-dataset v1,dim=" << ds.dim << ",classes=" << ds.num_classes << "\n";
  for (const std::string& c : comments) out << "# " << c << "\n";
  auto emit = [&out](const ClassPools& pools, Domain d) {
    for (const auto& pool : pools)
      for (const Sample& s : pool) {
        out << domain_code(d) << ',' << s.label;
        for (double f : s.features) out << ',' << fmt_double(f);
        out << '\n';
      }
  };
  emit(ds.source, Domain::Source);
  emit(ds.target, Domain::Target);
  return out.str();
}

inline void write_dataset_csv(const std::string& path, const RawDataset& ds,
                              const std::vector<std::string>& comments = {}) {
  write_text_file(path, dataset_to_csv(ds, comments));
}

inline RawDataset dataset_from_csv(const std::string& text, const std::string& origin = "dataset") {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line))
    throw std::invalid_argument(origin + ": empty file");
  int dim = 0, classes = 0;
  if (std::sscanf(line.c_str(), "tmps-dataset v1,dim=%d,classes=%d", &dim, &classes) != 2)
    throw std::invalid_argument(origin + ": line 1: bad header '" + line + "'");
  if (dim < 1 || classes < 2)
    throw std::invalid_argument(origin + ": line 1: invalid dim/classes (" +
                                std::to_string(dim) + ", " + std::to_string(classes) + ")");
  RawDataset ds;
  ds.dim = dim;
  ds.num_classes = classes;
  ds.source.resize(classes);
  ds.target.resize(classes);
  std::uint64_t id = 0;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const std::string where = origin + ": line " + std::to_string(lineno);
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t pos = line.find(',', start);
      fields.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
      if (pos == std::string::npos) break;
      start = pos + 1;
    }
    if (static_cast<int>(fields.size()) != 2 + dim)
      throw std::invalid_argument(where + ": expected " + std::to_string(2 + dim) +
                                  " fields, got " + std::to_string(fields.size()));
    if (fields[0] != "S" && fields[0] != "T")
      throw std::invalid_argument(where + ": domain must be S or T, got '" + fields[0] + "'");
    Sample s;
    s.id = id++;
    s.domain = fields[0] == "S" ? Domain::Source : Domain::Target;
    try {
      std::size_t used = 0;
      s.label = std::stoi(fields[1], &used);
      if (used != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw std::invalid_argument(where + ": bad label '" + fields[1] + "'");
    }
    if (s.label < 0 || s.label >= classes)
      throw std::invalid_argument(where + ": label " + std::to_string(s.label) +
                                  " outside [0, " + std::to_string(classes) + ")");
    s.features.resize(dim);
    for (int i = 0; i < dim; ++i)
      if (!parse_double(fields[2 + i], s.features[i]))
        throw std::invalid_argument(where + ": bad feature value '" + fields[2 + i] + "'");
    (s.domain == Domain::Source ? ds.source : ds.target)[s.label].push_back(std::move(s));
  }
  for (int c = 0; c < classes; ++c)
    if (ds.source[c].empty())
      throw std::invalid_argument(origin + ": class " + std::to_string(c) +
                                  " has no source samples");
  return ds;
}

inline RawDataset read_dataset_csv(const std::string& path) {
  return dataset_from_csv(read_text_file(path), path);
}

}  // namespace tmps
