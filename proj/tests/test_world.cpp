// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <set>
#include <string>
#include <vector>

#include "qebench/errors.hpp"
#include "qebench/world.hpp"

using namespace qebench;

namespace {

Dataset standard_dataset(std::size_t n_train = 10000, std::size_t n_id = 2000,
                         std::size_t n_ood = 2000, double rho = 0.8,
                         std::uint64_t seed = 7) {
  WorldSpec world = WorldSpec::standard();
  return generate_dataset(world, PriorSpec::shifted(world, rho),
                          GenCounts{n_train, n_id, n_ood}, seed);
}

bool is_straight(const WorldSpec& w, const SyntheticSample& s) {
  return s.tokens.at(kStraightSlot) != w.filler_token();
}

}  // namespace

TEST_CASE("standard world enumerates vocabulary and answers") {
  WorldSpec w = WorldSpec::standard();
  w.validate();
  CHECK(w.token_count() == 14);
  CHECK(w.feature_dim() == 10);
  CHECK(w.answer_count() == 12);
  CHECK(w.pad_token() == 0);
  CHECK(w.token_name(0) == "<pad>");
  CHECK(w.token_name(w.filler_token()) == "thing");
  CHECK(w.token_name(w.type_token(QType::is_before)) == "is-before");
  CHECK(w.token_name(w.color_token(1)) == "green");
  CHECK(w.token_name(w.shape_token(3)) == "star");
  CHECK_THROWS_AS(w.token_name(w.token_count()), LookupError);

  std::set<std::string> names;
  for (std::size_t i = 0; i < w.token_count(); ++i) names.insert(w.token_name(i));
  CHECK(names.size() == w.token_count());

  CHECK(w.type_answer_base(QType::what_color) == 0);
  CHECK(w.type_answer_base(QType::what_shape) == 4);
  CHECK(w.type_answer_base(QType::what_size) == 8);
  CHECK(w.type_answer_base(QType::is_before) == 10);
  CHECK(w.type_answer_count(QType::what_size) == 2);
  CHECK(w.answer_name(10) == "yes");
  CHECK(w.answer_name(11) == "no");
  CHECK(w.answer_name(5) == "cube");
  CHECK_THROWS_AS(w.answer_name(12), LookupError);

  CHECK(to_string(Split::ood_test) == "ood-test");
  CHECK(parse_split("id-test") == Split::id_test);
  CHECK_THROWS_AS(parse_split("test"), ConfigError);
}

TEST_CASE("world validation rejects contradictions") {
  WorldSpec w = WorldSpec::standard();
  w.shapes.pop_back();
  CHECK_THROWS_AS(w.validate(), ConfigError);

  w = WorldSpec::standard();
  w.noise_sigma = -0.1;
  CHECK_THROWS_AS(w.validate(), ConfigError);

  w = WorldSpec::standard();
  w.order_skew = 1.5;
  CHECK_THROWS_AS(w.validate(), ConfigError);

  w = WorldSpec::standard();
  w.type_mix = {0.5, 0.5, 0.5, 0.5};
  CHECK_THROWS_AS(w.validate(), ConfigError);

  w = WorldSpec::standard();
  w.sizes = {"small"};
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("shifted priors are normalized with disjoint majorities") {
  WorldSpec w = WorldSpec::standard();
  PriorSpec p = PriorSpec::shifted(w, 0.8);
  p.validate(w);
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    CHECK(p.train_majority[t] == 0);
    CHECK(p.ood_majority[t] == 1);
    CHECK(p.train_dist[t][0] == doctest::Approx(0.8));
    CHECK(p.ood_dist[t][1] == doctest::Approx(0.8));
    const std::size_t k = w.type_answer_count(static_cast<QType>(t));
    CHECK(p.train_dist[t].size() == k);
    double sum = 0.0;
    for (double v : p.train_dist[t]) sum += v;
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(PriorSpec::shifted(w, 0.4), ConfigError);  // below 1/2
  CHECK_THROWS_AS(PriorSpec::shifted(w, 1.2), ConfigError);

  PriorSpec broken = PriorSpec::shifted(w, 0.8);
  broken.ood_majority[2] = 0;  // collides with the train majority
  CHECK_THROWS_AS(broken.validate(w), ConfigError);

  broken = PriorSpec::shifted(w, 0.8);
  broken.train_dist[1][2] = 0.9;  // out-masses the designated majority
  CHECK_THROWS_AS(broken.validate(w), ConfigError);
}

TEST_CASE("degenerate rho pins every train answer to the majority") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = generate_dataset(w, PriorSpec::shifted(w, 1.0),
                                  GenCounts{500, 1, 1}, 3);
  for (const SyntheticSample& s : data.train) {
    const QType t = static_cast<QType>(s.type);
    CHECK(s.answer == w.type_answer_base(t));  // local index 0 throughout
  }
}

TEST_CASE("same seed reproduces the dataset byte for byte") {
  Dataset a = standard_dataset(400, 150, 150, 0.8, 99);
  Dataset b = standard_dataset(400, 150, 150, 0.8, 99);
  CHECK(write_dataset(a) == write_dataset(b));
  Dataset c = standard_dataset(400, 150, 150, 0.8, 100);
  CHECK(write_dataset(a) != write_dataset(c));
}

TEST_CASE("samples satisfy their structural invariants") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(2000, 400, 400);
  std::set<std::size_t> seen_answers;
  for (const auto* split : {&data.train, &data.id_test, &data.ood_test}) {
    for (const SyntheticSample& s : *split) {
      REQUIRE(!s.tokens.empty());
      CHECK(s.tokens[0] == w.type_token(static_cast<QType>(s.type)));
      REQUIRE(s.objects.size() == 4);
      std::set<std::size_t> shapes, colors;
      for (const ObjectSpec& o : s.objects) {
        shapes.insert(o.shape);
        colors.insert(o.color);
      }
      CHECK(shapes.size() == 4);  // one object per shape value
      CHECK(colors.size() == 4);
      const QType t = static_cast<QType>(s.type);
      CHECK(s.answer >= w.type_answer_base(t));
      CHECK(s.answer < w.type_answer_base(t) + w.type_answer_count(t));
      if (t == QType::is_before) {
        REQUIRE(s.tokens.size() == kRelQuestionLen);
        CHECK(s.tokens[1] != s.tokens[2]);
        CHECK(s.tokens[1] >= w.shape_token(0));
        CHECK(s.tokens[2] >= w.shape_token(0));
      } else {
        REQUIRE(s.tokens.size() == kAttrQuestionLen);
        std::size_t referents = 0;
        for (std::size_t i = 1; i < s.tokens.size(); ++i) {
          if (s.tokens[i] == w.filler_token()) continue;
          ++referents;
          // The referent only ever occupies one of the two interior slots,
          // each ringed by fillers on both sides.
          CHECK((i == kStraightSlot || i == kSwappedSlot));
        }
        CHECK(referents == 1);
      }
      seen_answers.insert(s.answer);
    }
  }
  CHECK(seen_answers.size() == w.answer_count());  // every answer reachable
}

TEST_CASE("majority frequency tracks rho") {
  WorldSpec w = WorldSpec::standard();
  PriorSpec p = PriorSpec::shifted(w, 0.8);
  Dataset data = generate_dataset(w, p, GenCounts{10000, 2000, 10000}, 11);

  std::vector<std::size_t> type_n(kTypeCount, 0), train_maj(kTypeCount, 0);
  for (const SyntheticSample& s : data.train) {
    ++type_n[s.type];
    const QType t = static_cast<QType>(s.type);
    if (s.answer == w.type_answer_base(t) + p.train_majority[s.type]) {
      ++train_maj[s.type];
    }
  }
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    const double share = static_cast<double>(type_n[t]) / 10000.0;
    CHECK(share == doctest::Approx(0.25).epsilon(0.1));
    const double maj = static_cast<double>(train_maj[t]) /
                       static_cast<double>(type_n[t]);
    CHECK(maj == doctest::Approx(0.8).epsilon(0.025));
  }

  std::vector<std::size_t> ood_n(kTypeCount, 0), ood_maj(kTypeCount, 0);
  for (const SyntheticSample& s : data.ood_test) {
    ++ood_n[s.type];
    const QType t = static_cast<QType>(s.type);
    if (s.answer == w.type_answer_base(t) + p.ood_majority[s.type]) {
      ++ood_maj[s.type];
    }
  }
  for (std::size_t t = 0; t < kTypeCount; ++t) {
    const double maj = static_cast<double>(ood_maj[t]) /
                       static_cast<double>(ood_n[t]);
    CHECK(maj == doctest::Approx(0.8).epsilon(0.025));
  }
}

TEST_CASE("probe returns the type prefix") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(600, 200, 200);
  std::set<std::vector<std::size_t>> distinct;
  for (const SyntheticSample& s : data.train) {
    TokenSequence probe = qtype_probe(w, s);
    REQUIRE(probe.size() == 1);
    CHECK(probe.ids[0] == s.tokens[0]);
    distinct.insert(probe.ids);

    SyntheticSample reduced = s;
    reduced.tokens = probe.ids;
    TokenSequence again = qtype_probe(w, reduced);
    CHECK(again.ids == probe.ids);  // idempotent
  }
  CHECK(distinct.size() == kTypeCount);

  SyntheticSample bad = data.train[0];
  bad.tokens[0] = w.filler_token();
  CHECK_THROWS_AS(qtype_probe(w, bad), DataError);
  bad.tokens.clear();
  CHECK_THROWS_AS(qtype_probe(w, bad), DataError);
}

TEST_CASE("rule solver recovers every stored answer") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(3000, 800, 800);
  for (const auto* split : {&data.train, &data.id_test, &data.ood_test}) {
    std::size_t hits = 0;
    for (const SyntheticSample& s : *split) {
      hits += solve_by_rules(w, s) == s.answer ? 1 : 0;
    }
    CHECK(hits == split->size());
  }
}

TEST_CASE("solver rejects malformed questions") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(50, 10, 10);
  auto attr_frame = [&](std::size_t slot, std::size_t word) {
    std::vector<std::size_t> toks(kAttrQuestionLen, w.filler_token());
    toks[0] = w.type_token(QType::what_color);
    toks[slot] = word;
    return toks;
  };

  SyntheticSample s = data.train[0];
  s.tokens = attr_frame(kStraightSlot, w.filler_token());  // no referent at all
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
  s = data.train[0];
  s.tokens = attr_frame(kStraightSlot, w.shape_token(0));
  s.tokens[0] = w.filler_token();  // missing type word
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
  s = data.train[0];
  s.tokens = attr_frame(kStraightSlot, w.color_token(0));
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);  // referent family mismatch
  s = data.train[0];
  s.tokens = attr_frame(1, w.shape_token(0));  // referent off the two slots
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
  s = data.train[0];
  s.tokens = attr_frame(kStraightSlot, w.shape_token(0));
  s.tokens[kSwappedSlot] = w.shape_token(1);  // two referents at once
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
  s = data.train[0];
  s.tokens = attr_frame(kStraightSlot, w.shape_token(0));
  s.tokens.pop_back();  // truncated frame
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
  s = data.train[0];
  s.objects.pop_back();
  CHECK_THROWS_AS(solve_by_rules(w, s), DataError);
}

TEST_CASE("entity swaps flip every relational answer") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(4000, 500, 500);
  std::size_t relational = 0, flipped = 0;
  for (const SyntheticSample& s : data.train) {
    if (static_cast<QType>(s.type) != QType::is_before) continue;
    ++relational;
    SyntheticSample swapped = s;
    std::swap(swapped.tokens[1], swapped.tokens[2]);
    const std::size_t original = solve_by_rules(w, s);
    const std::size_t mirrored = solve_by_rules(w, swapped);
    if (original != mirrored && original + mirrored == 10 + 11) ++flipped;
  }
  CHECK(relational > 500);
  CHECK(flipped == relational);
}

TEST_CASE("image features are seeded one-hots plus noise") {
  WorldSpec w = WorldSpec::standard();
  w.noise_sigma = 0.0;
  Dataset data = generate_dataset(w, PriorSpec::shifted(w, 0.8),
                                  GenCounts{20, 1, 1}, 5);
  for (const SyntheticSample& s : data.train) {
    Tensor f = image_features(w, s);
    REQUIRE(f.shape() == std::vector<std::size_t>{4, 10});
    for (std::size_t o = 0; o < 4; ++o) {
      double sum = 0.0;
      for (std::size_t d = 0; d < 10; ++d) sum += f.at(o * 10 + d);
      CHECK(sum == 3.0);  // exactly one hot per attribute family
      CHECK(f.at(o * 10 + s.objects[o].color) == 1.0);
      CHECK(f.at(o * 10 + 4 + s.objects[o].shape) == 1.0);
      CHECK(f.at(o * 10 + 8 + s.objects[o].size) == 1.0);
    }
  }

  w.noise_sigma = 0.3;
  const SyntheticSample& s = data.train[0];
  Tensor a = image_features(w, s);
  Tensor b = image_features(w, s);
  Tensor c = image_features(w, [&] {
    SyntheticSample other = s;
    other.noise_seed += 1;
    return other;
  }());
  bool same = true, differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    same = same && a.at(i) == b.at(i);  // same noise stream, bitwise equal
    differs = differs || a.at(i) != c.at(i);
  }
  CHECK(same);
  CHECK(differs);
}

TEST_CASE("rendering order tracks the split majority") {
  WorldSpec w = WorldSpec::standard();
  w.order_skew = 0.9;
  PriorSpec p = PriorSpec::shifted(w, 0.8);
  Dataset data = generate_dataset(w, p, GenCounts{20000, 1000, 20000}, 21);

  for (const Split split : {Split::train, Split::ood_test}) {
    std::size_t maj_n = 0, maj_straight = 0, min_n = 0, min_straight = 0;
    for (const SyntheticSample& s : data.split(split)) {
      const QType t = static_cast<QType>(s.type);
      if (t == QType::is_before) continue;
      const std::size_t local = s.answer - w.type_answer_base(t);
      const bool straight = is_straight(w, s);
      if (local == p.majority_for(split, s.type)) {
        ++maj_n;
        maj_straight += straight ? 1 : 0;
      } else {
        ++min_n;
        min_straight += straight ? 1 : 0;
      }
    }
    const double on_majority = static_cast<double>(maj_straight) /
                               static_cast<double>(maj_n);
    const double off_majority = static_cast<double>(min_straight) /
                                static_cast<double>(min_n);
    CHECK(on_majority == doctest::Approx(0.9).epsilon(0.03));
    CHECK(off_majority == doctest::Approx(0.1).epsilon(0.35));
  }
}

TEST_CASE("dataset text round-trips byte for byte") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(300, 120, 130);
  const std::string text = write_dataset(data);
  Dataset back = read_dataset(text, w);
  CHECK(back.train.size() == 300);
  CHECK(back.id_test.size() == 120);
  CHECK(back.ood_test.size() == 130);
  CHECK(write_dataset(back) == text);

  const SyntheticSample& s0 = back.train[0];
  CHECK(s0.split == Split::train);
  CHECK(s0.tokens == data.train[0].tokens);
  CHECK(s0.noise_seed == data.train[0].noise_seed);
  CHECK(s0.objects[2].shape == data.train[0].objects[2].shape);
}

TEST_CASE("dataset files survive a save and load") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(40, 10, 10);
  const std::string path = "/tmp/qebench_world_roundtrip.tsv";
  save_dataset(path, data);
  Dataset back = load_dataset(path, w);
  CHECK(write_dataset(back) == write_dataset(data));
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_dataset("/tmp/qebench_missing_dir/x.tsv", w), IoError);
}

TEST_CASE("dataset reader rejects corrupt lines") {
  WorldSpec w = WorldSpec::standard();
  Dataset data = standard_dataset(3, 1, 1);
  std::string text = write_dataset(data);

  CHECK_THROWS_AS(read_dataset("weird\t0\t0\t1,9,13\t0,0,0\t5\n", w), DataError);
  CHECK_THROWS_AS(read_dataset("train\t0\t0\t1,9,13\t0,0,0\n", w), DataError);
  CHECK_THROWS_AS(read_dataset("train\t9\t0\t1,9,13\t0,0,0\t5\n", w), DataError);
  CHECK_THROWS_AS(read_dataset("train\t0\t99\t1,9,13\t0,0,0\t5\n", w), DataError);
  CHECK_THROWS_AS(read_dataset("train\t0\t0\t1,nine,13\t0,0,0\t5\n", w), DataError);
  std::string trimmed = text.substr(0, text.size() - 1);  // newline gone
  CHECK_THROWS_AS(read_dataset(trimmed, w), DataError);
  CHECK(read_dataset("", w).train.empty());
}

TEST_CASE("generation validates counts and specs") {
  WorldSpec w = WorldSpec::standard();
  PriorSpec p = PriorSpec::shifted(w, 0.8);
  CHECK_THROWS_AS(generate_dataset(w, p, GenCounts{0, 1, 1}, 1), DomainError);
  CHECK_THROWS_AS(generate_dataset(w, p, GenCounts{1, 0, 1}, 1), DomainError);

  PriorSpec broken = p;
  broken.train_dist[0][0] = 2.0;
  CHECK_THROWS_AS(generate_dataset(w, broken, GenCounts{1, 1, 1}, 1),
                  ConfigError);
}
