#include "crosslm/subword.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <unordered_map>

#include "doctest.h"
#include "crosslm/rng.hpp"

using namespace crosslm;

namespace {
std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}
}  // namespace

TEST_CASE("learn_bpe merges the most frequent pair first") {
    // word counts ab:2, ac:1 -> pair (a,b) freq 2 beats (a,c) freq 1
    MergeTable table = learn_bpe({"ab ab ac"}, 1);
    REQUIRE(table.size() == 1);
    CHECK(table.merge(0).first == "a");
    CHECK(table.merge(0).second == "b");
}

TEST_CASE("learn_bpe stops early when no pair repeats") {
    MergeTable table = learn_bpe({"ab cd"}, 10);
    CHECK(table.size() < 10);
}

TEST_CASE("learn_bpe on a repeated two-letter word merges its characters") {
    MergeTable table = learn_bpe({"aa aa"}, 1);
    REQUIRE(table.size() == 1);
    CHECK(table.merge(0).first == "a");
    CHECK(table.merge(0).second == "a");
}

TEST_CASE("learn_bpe tie-break is lexicographic") {
    // pairs (x,y) and (a,b) both occur twice; (a,b) sorts first
    MergeTable table = learn_bpe({"xy xy ab ab"}, 1);
    REQUIRE(table.size() == 1);
    CHECK(table.merge(0).first == "a");
    CHECK(table.merge(0).second == "b");
}

TEST_CASE("learn_bpe is deterministic") {
    const std::vector<std::string> sample = {"abc abd", "abc cde", "fgh abc"};
    MergeTable t1 = learn_bpe(sample, 5);
    MergeTable t2 = learn_bpe(sample, 5);
    REQUIRE(t1.size() == t2.size());
    for (size_t i = 0; i < t1.size(); ++i) CHECK(t1.merge(i) == t2.merge(i));
}

TEST_CASE("apply_bpe follows merge ranks") {
    MergeTable table;
    table.add("a", "b");

    SUBCASE("full merge") {
        const auto out = apply_bpe_word("ab", table);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == "ab");
    }
    SUBCASE("partial merge carries the continuation marker") {
        const auto out = apply_bpe_word("abc", table);
        REQUIRE(out.size() == 2);
        CHECK(out[0] == "ab@@");
        CHECK(out[1] == "c");
    }
    SUBCASE("word already a single symbol is unchanged") {
        const auto out = apply_bpe_word("a", table);
        REQUIRE(out.size() == 1);
        CHECK(out[0] == "a");
    }
}

TEST_CASE("segmentation is lossless: stripped pieces rebuild the word") {
    Rng rng(9);
    const std::string letters = "abcde";
    std::vector<std::string> corpus;
    for (int i = 0; i < 50; ++i) {
        std::string sentence;
        for (int w = 0; w < 5; ++w) {
            if (w) sentence += ' ';
            const size_t len = 1 + rng.uniform_int(6);
            for (size_t c = 0; c < len; ++c)
                sentence += letters[rng.uniform_int(letters.size())];
        }
        corpus.push_back(sentence);
    }
    MergeTable table = learn_bpe(corpus, 30);
    for (const auto& sentence : corpus) {
        for (const auto& word : split_words(sentence)) {
            std::string rebuilt;
            for (const auto& piece : apply_bpe_word(word, table)) {
                if (piece.size() > 2 && piece.ends_with(kContinuation))
                    rebuilt += piece.substr(0, piece.size() - 2);
                else
                    rebuilt += piece;
            }
            CHECK(rebuilt == word);
        }
    }
}

TEST_CASE("build_vocab thresholds, sorts and prepends specials") {
    SUBCASE("min_count drops rare tokens") {
        Vocabulary v = build_vocab({{"x", 3}, {"y", 1}}, 2);
        CHECK(v.size() == kNumSpecials + 1);
        CHECK(v.token(kNumSpecials) == "x");
    }
    SUBCASE("min_count 0 keeps everything") {
        Vocabulary v = build_vocab({{"x", 3}, {"y", 1}}, 0);
        CHECK(v.size() == kNumSpecials + 2);
    }
    SUBCASE("count ties break lexicographically") {
        Vocabulary v = build_vocab({{"b", 2}, {"a", 2}}, 0);
        CHECK(v.token(kNumSpecials) == "a");
        CHECK(v.token(kNumSpecials + 1) == "b");
    }
    SUBCASE("specials occupy the first five ids") {
        Vocabulary v = build_vocab({{"z", 1}}, 0);
        for (int32_t i = 0; i < kNumSpecials; ++i)
            CHECK(v.token(i) == kSpecialNames[i]);
    }
}

TEST_CASE("decode joins continuation markers and handles specials") {
    Vocabulary v = build_vocab({{"ab@@", 2}, {"c", 2}, {"ab", 1}, {"ac", 1}}, 0);
    SUBCASE("marker join") {
        CHECK(decode({v.id("ab@@"), v.id("c")}, v) == "abc");
    }
    SUBCASE("plain words keep spaces") {
        CHECK(decode({v.id("ab"), v.id("ac")}, v) == "ab ac");
    }
    SUBCASE("PAD is skipped") {
        CHECK(decode({v.id("ab"), kPad, v.id("ac")}, v) == "ab ac");
    }
    SUBCASE("UNK renders as its placeholder") {
        CHECK(decode({kUnk}, v) == "<unk>");
    }
    SUBCASE("id out of range throws") {
        CHECK_THROWS(decode({v.size()}, v));
    }
}

TEST_CASE("re-encoding a decoded sentence gives identical ids") {
    const std::vector<std::string> corpus = {"abc abd cde", "abc abc ab"};
    MergeTable table = learn_bpe(corpus, 10);
    std::unordered_map<std::string, uint64_t> counts;
    for (const auto& line : corpus)
        for (const auto& piece : apply_bpe(line, table)) ++counts[piece];
    Vocabulary vocab = build_vocab(counts, 0);
    for (const auto& line : corpus) {
        const auto ids = encode_sentence(line, table, vocab);
        const auto again = encode_sentence(decode(ids, vocab), table, vocab);
        CHECK(ids == again);
    }
}

TEST_CASE("codes and vocab files round-trip bit-exactly") {
    MergeTable table = learn_bpe({"abc abc abd abd"}, 4);
    const std::string codes_path = temp_path("clx_codes_test.txt");
    table.save(codes_path);
    MergeTable loaded = MergeTable::load(codes_path);
    REQUIRE(loaded.size() == table.size());
    for (size_t i = 0; i < table.size(); ++i) CHECK(loaded.merge(i) == table.merge(i));
    // byte-exact re-save
    const std::string codes_path2 = temp_path("clx_codes_test2.txt");
    loaded.save(codes_path2);
    std::ifstream f1(codes_path), f2(codes_path2);
    std::string c1((std::istreambuf_iterator<char>(f1)),
                   std::istreambuf_iterator<char>());
    std::string c2((std::istreambuf_iterator<char>(f2)),
                   std::istreambuf_iterator<char>());
    CHECK(c1 == c2);

    Vocabulary vocab = build_vocab({{"ab", 4}, {"cd", 1}}, 0);
    const std::string vocab_path = temp_path("clx_vocab_test.txt");
    vocab.save(vocab_path);
    Vocabulary vloaded = Vocabulary::load(vocab_path);
    REQUIRE(vloaded.size() == vocab.size());
    for (int32_t i = 0; i < vocab.size(); ++i) {
        CHECK(vloaded.token(i) == vocab.token(i));
        CHECK(vloaded.count(i) == vocab.count(i));
    }
    std::remove(codes_path.c_str());
    std::remove(codes_path2.c_str());
    std::remove(vocab_path.c_str());
}

TEST_CASE("invalid UTF-8 is rejected") {
    CHECK_THROWS(utf8_chars(std::string("\xff\xfe")));
    CHECK_THROWS(split_words(std::string("ok \xc3")));  // truncated sequence
}

TEST_CASE("multi-byte code points stay whole") {
    const auto chars = utf8_chars("caf\xc3\xa9");
    REQUIRE(chars.size() == 4);
    CHECK(chars[3] == "\xc3\xa9");
}
