// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "qebench/encoder.hpp"
#include "qebench/tensor.hpp"

namespace qebench {

// Synthetic benchmark with a train/OOD prior shift: every question type has a
// skewed answer distribution whose majority moves between splits, and the
// surface form of attribute questions carries a word-order cue tied to the
// split's own majority. Order-blind encoders see identical token bags either
// way; order-readers can fit the cue on train and inherit its flip on OOD.

enum class Split { train, id_test, ood_test };
inline constexpr std::size_t kSplitCount = 3;

std::string to_string(Split s);
Split parse_split(const std::string& s);

// Question types. The first three query one attribute of a referent object;
// the last asks whether one shape precedes another in the object list.
enum class QType { what_color, what_shape, what_size, is_before };
inline constexpr std::size_t kTypeCount = 4;

// Attribute questions render the referent at one of two interior slots of a
// fixed 7-token frame, two fillers away from the type word, the other slot,
// and the tail. Any width-3 window bag is therefore identical across the two
// renderings: only absolute-slot readers can separate them.
inline constexpr std::size_t kAttrQuestionLen = 7;
inline constexpr std::size_t kStraightSlot = 3;  // 0-based referent index
inline constexpr std::size_t kSwappedSlot = 4;
inline constexpr std::size_t kRelQuestionLen = 3;

struct WorldSpec {
  std::vector<std::string> colors = {"red", "green", "blue", "yellow"};
  std::vector<std::string> shapes = {"ball", "cube", "cone", "star"};
  std::vector<std::string> sizes = {"small", "big"};
  std::size_t object_count = 4;     // m objects per image
  double noise_sigma = 0.05;        // Gaussian noise on one-hot features
  double order_skew = 0.9;          // P(straight rendering | majority answer)
  std::vector<double> type_mix = {0.25, 0.25, 0.25, 0.25};

  // Shapes and colors are laid out as permutations over the m objects, so
  // both lists must have exactly m values; referents stay unique by design.
  void validate() const;

  // --- vocabulary -----------------------------------------------------------
  // 0 = <pad>, 1..4 = type words, then color words, shape words, one filler.
  std::size_t pad_token() const { return 0; }
  std::size_t type_token(QType t) const { return 1 + static_cast<std::size_t>(t); }
  std::size_t color_token(std::size_t c) const { return 1 + kTypeCount + c; }
  std::size_t shape_token(std::size_t s) const { return 1 + kTypeCount + colors.size() + s; }
  std::size_t filler_token() const { return 1 + kTypeCount + colors.size() + shapes.size(); }
  std::size_t token_count() const { return filler_token() + 1; }
  std::string token_name(std::size_t id) const;

  // --- answers --------------------------------------------------------------
  // Color values, then shape values, then size values, then yes/no.
  std::size_t answer_count() const { return colors.size() + shapes.size() + sizes.size() + 2; }
  std::size_t type_answer_base(QType t) const;
  std::size_t type_answer_count(QType t) const;
  std::string answer_name(std::size_t id) const;

  std::size_t feature_dim() const { return colors.size() + shapes.size() + sizes.size(); }

  static WorldSpec standard() { return WorldSpec{}; }
};

// Per-type categorical answer distributions for train/id and for ood, over
// the type's local answer indices, plus the designated majority of each.
struct PriorSpec {
  double rho = 0.8;
  std::vector<std::vector<double>> train_dist;  // [type][local answer]
  std::vector<std::vector<double>> ood_dist;
  std::vector<std::size_t> train_majority;      // local index per type
  std::vector<std::size_t> ood_majority;

  // rho mass on the majority, the rest uniform; OOD majority is the train
  // majority cyclically shifted by one inside the type's answer list.
  static PriorSpec shifted(const WorldSpec& world, double rho);

  // Normalized rows, majority entry maximal, train/ood majorities disjoint.
  void validate(const WorldSpec& world) const;

  const std::vector<double>& dist_for(Split s, std::size_t type) const;
  std::size_t majority_for(Split s, std::size_t type) const;
};

struct ObjectSpec {
  std::size_t color = 0;
  std::size_t shape = 0;
  std::size_t size = 0;
};

struct SyntheticSample {
  Split split = Split::train;
  std::size_t type = 0;
  std::size_t answer = 0;               // global answer id
  std::vector<std::size_t> tokens;      // tokens[0] = type word; length 7
                                        // (attribute) or 3 (is-before)
  std::vector<ObjectSpec> objects;      // m objects, list order is ground truth for is-before
  std::uint64_t noise_seed = 0;
};

struct Dataset {
  std::vector<SyntheticSample> train;
  std::vector<SyntheticSample> id_test;
  std::vector<SyntheticSample> ood_test;

  const std::vector<SyntheticSample>& split(Split s) const;
};

struct GenCounts {
  std::size_t train = 0;
  std::size_t id_test = 0;
  std::size_t ood_test = 0;
};

// Seeded and order-free: sample i of split s draws from a stream keyed by
// (seed, s, i) alone, so any split regenerates byte-identically in isolation.
Dataset generate_dataset(const WorldSpec& world, const PriorSpec& priors,
                         const GenCounts& counts, std::uint64_t seed);

// One-hot(color) ++ one-hot(shape) ++ one-hot(size) per object, plus
// sigma-scaled Gaussian noise from the sample's own seed. Constant tensor.
Tensor image_features(const WorldSpec& world, const SyntheticSample& sample);

// The question truncated to its type prefix (one token). Idempotent.
TokenSequence qtype_probe(const WorldSpec& world, const SyntheticSample& sample);

// Exhaustive rule-based reader: parses the question, inspects the objects,
// returns the global answer id. Ignores the stored answer field.
std::size_t solve_by_rules(const WorldSpec& world, const SyntheticSample& sample);

// Line format: split \t type \t answer \t tok,tok,tok \t c,s,z;... \t noise_seed
// Writing then reading then writing again reproduces the bytes exactly.
std::string write_dataset(const Dataset& data);
Dataset read_dataset(const std::string& text, const WorldSpec& world);
void save_dataset(const std::string& path, const Dataset& data);
Dataset load_dataset(const std::string& path, const WorldSpec& world);

}  // namespace qebench
