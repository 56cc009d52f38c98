#include <algorithm>
#include <random>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "clickseg/class_split.hpp"
#include "clickseg/error.hpp"

namespace clickseg {
namespace {

TEST(NormalizeTest, CaseFoldTrimCollapse) {
  EXPECT_EQ(normalize_class_name("  Potted   Plant\t"), "potted plant");
  EXPECT_EQ(normalize_class_name("TV"), "tv");
  EXPECT_EQ(normalize_class_name("   "), "");
}

TEST(OpenImagesSplitTest, IntersectionIsSeen) {
  const auto split = build_openimages_split({"person", "dog"}, {"person", "dog", "microscope"});
  EXPECT_EQ(split.seen(), (std::set<std::string>{"dog", "person"}));
  EXPECT_EQ(split.unseen(), (std::set<std::string>{"microscope"}));
  EXPECT_EQ(split.dataset(), DatasetName::openimages);
}

TEST(OpenImagesSplitTest, DisjointVocabulariesFail) {
  EXPECT_THROW(build_openimages_split({"a"}, {"b"}), Error);
  EXPECT_THROW(build_openimages_split({}, {"b"}), Error);
}

TEST(OpenImagesSplitTest, NormalizesBeforeIntersecting) {
  const auto split = build_openimages_split({"Potted plant", " Dog"}, {"potted  plant", "DOG", "Tie"});
  EXPECT_EQ(split.seen().size(), 2u);
  EXPECT_TRUE(split.is_seen("dog"));
}

TEST(OpenImagesSplitTest, OrderIndependentAndIdempotent) {
  std::vector<std::string> coco{"person", "dog", "cat", "car", "Bus"};
  std::vector<std::string> oi{"Person", "Cat", "microscope", "bus", "tree", "Car"};
  const auto reference = build_openimages_split(coco, oi);
  std::mt19937 gen(3);
  for (int i = 0; i < 10; ++i) {
    std::shuffle(coco.begin(), coco.end(), gen);
    std::shuffle(oi.begin(), oi.end(), gen);
    EXPECT_EQ(build_openimages_split(coco, oi), reference);
  }
  const auto again = build_openimages_split(std::vector<std::string>(reference.seen().begin(), reference.seen().end()),
                                            oi);
  EXPECT_EQ(again, reference);
}

TEST(OpenImagesSplitTest, DiscrepancyReportListsUnmatchedCocoNames) {
  const std::vector<std::string> coco{"person", "Dog", "cell phone"}, oi{"person", "dog", "mobile phone", "tie"};
  const auto split = build_openimages_split(coco, oi);
  const auto report = openimages_split_report(split, coco, oi, 3);
  EXPECT_EQ(report.actual_seen, 2u);
  EXPECT_FALSE(report.matches());
  EXPECT_EQ(report.coco_unmatched, std::vector<std::string>{"cell phone"});
  const auto j = nlohmann::json::parse(report.to_json());
  EXPECT_EQ(j.at("expected_seen"), 3);
  EXPECT_EQ(j.at("seen").size(), 2u);
  EXPECT_TRUE(openimages_split_report(split, coco, oi, 2).matches());
}

TEST(ClassifyTest, SeenUnseenAndCaseFolding) {
  const ClassSplit split(DatasetName::custom, {"cat"}, {"tie"});
  EXPECT_EQ(classify_instance(split, "cat"), Membership::seen);
  EXPECT_EQ(classify_instance(split, "tie"), Membership::unseen);
  EXPECT_EQ(classify_instance(split, "Cat"), Membership::seen);
}

TEST(ClassifyTest, UnknownClassListsNearestNames) {
  const ClassSplit split(DatasetName::custom, {"cat", "car"}, {"tie", "person"});
  try {
    split.classify("cats");
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::not_found);
    EXPECT_NE(std::string(e.what()).find("'cat'"), std::string::npos);
  }
}

TEST(ClassSplitTest, OverlapRejected) {
  EXPECT_THROW(ClassSplit(DatasetName::custom, {"cat"}, {"Cat "}), Error);
}

TEST(ClassSplitTest, CoverageCheck) {
  const ClassSplit split(DatasetName::custom, {"cat"}, {"tie"});
  EXPECT_NO_THROW(split.validate_covers({"cat", "TIE"}));
  EXPECT_THROW(split.validate_covers({"cat", "dog"}), Error);
}

TEST(ClassSplitTest, JsonRoundTrip) {
  const ClassSplit split(DatasetName::voc, {"cow", "sofa"}, {"cat"});
  const auto json = split_to_json(split);
  EXPECT_NE(json.find("\"dataset_name\": \"voc\""), std::string::npos);
  EXPECT_EQ(split_from_json(json), split);
  EXPECT_THROW(split_from_json("{\"seen\": []}"), Error);
}

}  // namespace
}  // namespace clickseg
