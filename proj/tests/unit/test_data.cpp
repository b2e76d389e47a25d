#include <gtest/gtest.h>

#include <algorithm>
#include <random>
#include <set>

#include "sentimtl/data.hpp"
#include "sentimtl/error.hpp"
#include "testing.hpp"

using namespace sentimtl;
using sentimtl::testing::fixture;
using sentimtl::testing::read_file;
using sentimtl::testing::TempDir;
using sentimtl::testing::write_file;

namespace {

Instance plain(std::string id, std::string sentence = "the soup was cold", std::string target = "soup",
               Polarity p = Polarity::negative) {
  Instance i;
  i.id = std::move(id);
  i.sentence = std::move(sentence);
  i.target = std::move(target);
  i.polarity = p;
  return i;
}

std::string expect_data_error(const std::function<void()>& f) {
  try {
    f();
  } catch (const DataError& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected DataError";
  return {};
}

}  // namespace

TEST(Polarity, ParsesExactLabelsOnly) {
  EXPECT_EQ(parse_polarity("positive"), Polarity::positive);
  EXPECT_EQ(parse_polarity("negative"), Polarity::negative);
  EXPECT_EQ(parse_polarity("neutral"), Polarity::neutral);
  EXPECT_FALSE(parse_polarity("Positive"));
  EXPECT_FALSE(parse_polarity("conflict"));
  for (Polarity p : kPolarities) EXPECT_EQ(parse_polarity(to_string(p)), p);
}

TEST(Instance, ValidationRejectsBrokenRecords) {
  EXPECT_THROW(validate(plain("a", "   ")), DataError);
  EXPECT_THROW(validate(plain("a", "x", "")), DataError);
  Instance bad = plain("a");
  bad.aux = AuxiliaryElements{"soup", 0.4, "cold", 0.9, 1, true};
  EXPECT_THROW(validate(bad), DataError);
  bad.aux = AuxiliaryElements{"", 0.9, "cold", 0.9, 1, true};
  EXPECT_THROW(validate(bad), DataError);
  bad.aux = AuxiliaryElements{"soup", 0.9, "cold", 1.0, 1, true};
  EXPECT_NO_THROW(validate(bad));
}

TEST(Dataset, RejectsDuplicateIds) {
  const auto msg = expect_data_error([] { Dataset("d", {plain("x"), plain("x")}); });
  EXPECT_NE(msg.find("duplicate"), std::string::npos);
}

TEST(Jsonl, LoadsFigureOneSentence) {
  TempDir dir;
  write_file(dir / "one.jsonl",
             R"({"id":"r1","sentence":"The new operating system makes the laptop much easier to use.","target":"operating system","polarity":"positive","implicit":true})"
             "\n");
  const Dataset d = load_jsonl(dir / "one.jsonl");
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].id, "r1");
  EXPECT_EQ(d[0].target, "operating system");
  EXPECT_EQ(d[0].polarity, Polarity::positive);
  EXPECT_TRUE(d[0].implicit);
  EXPECT_FALSE(d[0].augmented());
}

TEST(Jsonl, EmptyFileGivesEmptyDataset) {
  TempDir dir;
  write_file(dir / "empty.jsonl", "");
  EXPECT_EQ(load_jsonl(dir / "empty.jsonl").size(), 0u);
}

TEST(Jsonl, RoundTripIsByteIdentical) {
  TempDir dir;
  const auto src = fixture("aug_small.jsonl");
  const Dataset d = load_jsonl(src);
  ASSERT_EQ(d.size(), 2u);
  ASSERT_TRUE(d[1].augmented());
  EXPECT_DOUBLE_EQ(d[1].aux->aspect_confidence, 0.85);
  save_jsonl(d, dir / "out.jsonl");
  EXPECT_EQ(read_file(dir / "out.jsonl"), read_file(src));
  EXPECT_EQ(load_jsonl(dir / "out.jsonl"), d);
}

TEST(Jsonl, SerializesConfidenceField) {
  Instance i = plain("c1");
  i.aux = AuxiliaryElements{"soup", 0.85, "cold", 0.5, 1, false};
  const std::string line = to_jsonl_line(i);
  EXPECT_NE(line.find("\"aspect_confidence\":0.85"), std::string::npos) << line;
  EXPECT_EQ(line.find('\n'), std::string::npos);
}

TEST(Jsonl, SaveWritesOneLinePerInstance) {
  TempDir dir;
  save_jsonl(Dataset("d", {plain("a"), plain("b")}), dir / "two.jsonl");
  const std::string text = read_file(dir / "two.jsonl");
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_EQ(text.back(), '\n');
}

TEST(Jsonl, FieldOrderIsCanonicalized) {
  TempDir dir;
  write_file(dir / "shuffled.jsonl",
             R"({"polarity":"neutral","implicit":false,"target":"menu","id":"m","sentence":"the menu"})"
             "\n");
  save_jsonl(load_jsonl(dir / "shuffled.jsonl"), dir / "canon.jsonl");
  EXPECT_EQ(read_file(dir / "canon.jsonl"),
            "{\"id\":\"m\",\"sentence\":\"the menu\",\"target\":\"menu\",\"polarity\":\"neutral\","
            "\"implicit\":false}\n");
}

TEST(Jsonl, NormalizesToNfc) {
  Instance i = plain("u", "caf\x65\xcc\x81 was fine", "caf\x65\xcc\x81");
  const std::string line = to_jsonl_line(i);
  EXPECT_NE(line.find("caf\xc3\xa9 was fine"), std::string::npos);
}

TEST(Jsonl, MalformedLineNamesLineNumber) {
  TempDir dir;
  write_file(dir / "bad.jsonl",
             R"({"id":"a","sentence":"s","target":"t","polarity":"positive","implicit":false})"
             "\n{not json\n");
  const auto msg = expect_data_error([&] { load_jsonl(dir / "bad.jsonl"); });
  EXPECT_NE(msg.find(":2:"), std::string::npos) << msg;
}

TEST(Jsonl, UnknownPolarityNamesValue) {
  TempDir dir;
  write_file(dir / "bad.jsonl",
             R"({"id":"a","sentence":"s","target":"t","polarity":"mixed","implicit":false})"
             "\n");
  const auto msg = expect_data_error([&] { load_jsonl(dir / "bad.jsonl"); });
  EXPECT_NE(msg.find("mixed"), std::string::npos) << msg;
}

TEST(Jsonl, DuplicateIdFailsLoad) {
  TempDir dir;
  const std::string line =
      R"({"id":"a","sentence":"s","target":"t","polarity":"positive","implicit":false})";
  write_file(dir / "dup.jsonl", line + "\n" + line + "\n");
  EXPECT_THROW(load_jsonl(dir / "dup.jsonl"), DataError);
}

TEST(Jsonl, MissingFileIsIoError) {
  EXPECT_THROW(load_jsonl("/nonexistent/x.jsonl"), IoError);
}

TEST(Jsonl, UnwritablePathIsIoError) {
  EXPECT_THROW(save_jsonl(Dataset("d", {plain("a")}), "/nonexistent/dir/x.jsonl"), IoError);
}

TEST(Jsonl, StrictRejectsAndLenientClipsConfidence) {
  const std::string line =
      R"({"id":"a","sentence":"s","target":"t","polarity":"positive","implicit":false,"aspect":"t","aspect_confidence":0.2,"opinion":"o","opinion_confidence":1.3})";
  EXPECT_THROW(parse_jsonl_line(line), DataError);
  LoadStats stats;
  const Instance i = parse_jsonl_line(line, ConfidencePolicy::lenient, &stats);
  EXPECT_EQ(stats.clipped_confidences, 2u);
  EXPECT_EQ(i.aux->aspect_confidence, 0.5);
  EXPECT_EQ(i.aux->opinion_confidence, 1.0);
}

TEST(Jsonl, RandomizedRoundTrip) {
  TempDir dir;
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> conf(0.5, 1.0);
  const std::vector<std::string> words = {"the", "soup", "was", "caf\xc3\xa9", "\"quoted\"", "tab\there",
                                          "slash\\", "\xe2\x82\xac", "ok"};
  std::vector<Instance> instances;
  for (int n = 0; n < 200; ++n) {
    Instance i;
    i.id = "id" + std::to_string(n);
    for (int w = 0; w < 1 + static_cast<int>(rng() % 6); ++w) i.sentence += words[rng() % words.size()] + " ";
    i.sentence += "end";
    i.target = words[rng() % words.size()];
    i.polarity = kPolarities[rng() % 3];
    i.implicit = rng() % 2;
    if (rng() % 2) {
      i.aux = AuxiliaryElements{words[rng() % words.size()], conf(rng), words[rng() % words.size()],
                                conf(rng), static_cast<int>(rng() % 4), static_cast<bool>(rng() % 2)};
    }
    instances.push_back(i);
  }
  const Dataset d("rand", instances);
  save_jsonl(d, dir / "r.jsonl");
  const Dataset back = load_jsonl(dir / "r.jsonl");
  EXPECT_EQ(back, d);
  save_jsonl(back, dir / "r2.jsonl");
  EXPECT_EQ(read_file(dir / "r.jsonl"), read_file(dir / "r2.jsonl"));
}

TEST(Split, ForcedByFlag) {
  const Dataset d("d", {plain("r1")});
  const ImplicitFlags flags{{"r1", true}};
  const auto s = split_implicit(d, &flags);
  EXPECT_EQ(s.explicit_slice.size(), 0u);
  ASSERT_EQ(s.implicit_slice.size(), 1u);
  EXPECT_EQ(s.implicit_slice[0].id, "r1");
}

TEST(Split, PartitionCardinality) {
  std::vector<Instance> v;
  ImplicitFlags flags;
  for (int i = 0; i < 10; ++i) {
    v.push_back(plain("i" + std::to_string(i)));
    flags["i" + std::to_string(i)] = i < 4;
  }
  const auto s = split_implicit(Dataset("d", v), &flags);
  EXPECT_EQ(s.explicit_slice.size(), 6u);
  EXPECT_EQ(s.implicit_slice.size(), 4u);
}

TEST(Split, MissingFlagsAreListed) {
  const Dataset d("d", {plain("a"), plain("b"), plain("c")});
  const ImplicitFlags flags{{"b", true}};
  const auto msg = expect_data_error([&] { split_implicit(d, &flags); });
  EXPECT_NE(msg.find("a"), std::string::npos);
  EXPECT_NE(msg.find("c"), std::string::npos);
}

TEST(Split, RandomFlagsPartitionProperty) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Instance> v;
    ImplicitFlags flags;
    const int n = static_cast<int>(rng() % 30);
    for (int i = 0; i < n; ++i) {
      v.push_back(plain("x" + std::to_string(i)));
      flags["x" + std::to_string(i)] = rng() % 2;
    }
    const auto s = split_implicit(Dataset("d", v), &flags);
    std::multiset<std::string> seen;
    for (const auto& i : s.explicit_slice) {
      EXPECT_FALSE(flags.at(i.id));
      EXPECT_FALSE(i.implicit);
      seen.insert(i.id);
    }
    for (const auto& i : s.implicit_slice) {
      EXPECT_TRUE(flags.at(i.id));
      EXPECT_TRUE(i.implicit);
      seen.insert(i.id);
    }
    std::multiset<std::string> all;
    for (const auto& i : v) all.insert(i.id);
    EXPECT_EQ(seen, all);
  }
}

TEST(Split, LexiconFixtureHeuristic) {
  const OpinionLexicon lex = OpinionLexicon::load(fixture("lexicon5.txt"));
  EXPECT_EQ(lex.size(), 5u);
  const Dataset d("d", {plain("e", "great battery", "battery"), plain("i", "the battery died", "battery")});
  const auto s = split_implicit(d, nullptr, lex);
  ASSERT_EQ(s.explicit_slice.size(), 1u);
  EXPECT_EQ(s.explicit_slice[0].id, "e");
  ASSERT_EQ(s.implicit_slice.size(), 1u);
  EXPECT_EQ(s.implicit_slice[0].id, "i");
}

TEST(Split, FlagFileLoads) {
  TempDir dir;
  write_file(dir / "flags.json", R"({"a": true, "b": false})");
  const auto flags = load_implicit_flags(dir / "flags.json");
  EXPECT_TRUE(flags.at("a"));
  EXPECT_FALSE(flags.at("b"));
  write_file(dir / "bad.json", R"({"a": 1})");
  EXPECT_THROW(load_implicit_flags(dir / "bad.json"), DataError);
}

TEST(Semeval, FanOutDropConflictAndAttribute) {
  const auto c = convert_semeval_xml(fixture("semeval_small.xml"));
  EXPECT_EQ(c.dropped_conflict, 1u);
  ASSERT_EQ(c.dataset.size(), 3u);
  EXPECT_EQ(c.dataset[0].target, "appetizers");
  EXPECT_EQ(c.dataset[1].target, "steak");
  EXPECT_EQ(c.dataset[0].polarity, Polarity::positive);
  EXPECT_FALSE(c.dataset[0].implicit);
  EXPECT_EQ(c.dataset[2].target, "fish");
  EXPECT_EQ(c.dataset[2].polarity, Polarity::negative);
  EXPECT_TRUE(c.dataset[2].implicit);
}

TEST(Semeval, TwoTermsGiveTwoInstances) {
  TempDir dir;
  write_file(dir / "two.xml",
             "<sentences><sentence id=\"1\"><text>Good food, bad service.</text><aspectTerms>"
             "<aspectTerm term=\"food\" polarity=\"positive\"/><aspectTerm term=\"service\" "
             "polarity=\"negative\"/></aspectTerms></sentence></sentences>");
  const auto c = convert_semeval_xml(dir / "two.xml");
  ASSERT_EQ(c.dataset.size(), 2u);
  EXPECT_EQ(c.dataset[0].polarity, Polarity::positive);
  EXPECT_EQ(c.dataset[1].polarity, Polarity::negative);
}

TEST(Semeval, EmptyRootGivesEmptyDataset) {
  TempDir dir;
  write_file(dir / "empty.xml", "<sentences/>");
  EXPECT_EQ(convert_semeval_xml(dir / "empty.xml").dataset.size(), 0u);
}

TEST(Semeval, ErrorsOnMalformedXmlAndMissingPolarity) {
  TempDir dir;
  write_file(dir / "broken.xml", "<sentences><sentence id=\"1\">\n<text>x</text>\n");
  EXPECT_THROW(convert_semeval_xml(dir / "broken.xml"), DataError);
  write_file(dir / "nopol.xml",
             "<sentences><sentence id=\"1\"><text>x y</text><aspectTerms><aspectTerm term=\"x\"/>"
             "</aspectTerms></sentence></sentences>");
  const auto msg = expect_data_error([&] { convert_semeval_xml(dir / "nopol.xml"); });
  EXPECT_NE(msg.find("polarity"), std::string::npos);
}
