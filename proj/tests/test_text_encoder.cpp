#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <map>
#include <string>
#include <vector>

#include "forward_oracle.hpp"
#include "gradcheck.hpp"
#include "sdtag/corpus.hpp"
#include "sdtag/tags.hpp"
#include "sdtag/tensor.hpp"
#include "sdtag/text_encoder.hpp"
#include "sdtag/vocab.hpp"

namespace {

using namespace sdtag;

TagSet make_tags(std::initializer_list<std::pair<const char*, const char*>> kvs) {
    TagSet t;
    for (const auto& [k, v] : kvs) t.set(k, v);
    return t;
}

// A tiny corpus whose relevant subsets are clearly separable.
std::vector<TagSet> tiny_corpus() {
    return {
        make_tags({{"highway", "residential"}, {"name", "oak street"}}),
        make_tags({{"highway", "residential"}, {"name", "elm street"}}),
        make_tags({{"highway", "motorway"}, {"lanes", "4"}}),
        make_tags({{"highway", "motorway"}, {"lanes", "4"}, {"tiger:cfcc", "a41"}}),
        make_tags({{"railway", "rail"}}),
        make_tags({{"building", "house"}}),
    };
}

RelevanceConfig tiny_relevance() {
    return RelevanceConfig({"name"}, {"tiger:"});
}

// ---------------- vocabulary ----------------

TEST(Vocab, BuildContainsSplitTokens) {
    Vocabulary v = build_vocab({make_tags({{"highway", "residential"}})}, 64);
    EXPECT_TRUE(v.contains("highway"));
    EXPECT_TRUE(v.contains("residential"));
    EXPECT_EQ(v.id("[PAD]"), kPadId);
    EXPECT_EQ(v.id("[UNK]"), kUnkId);
    EXPECT_EQ(v.id("[CLS]"), kClsId);
    EXPECT_EQ(v.id("[SEP]"), kSepId);
}

TEST(Vocab, UnknownTokenMapsToUnk) {
    Vocabulary v = build_vocab({make_tags({{"highway", "residential"}})}, 64);
    EXPECT_EQ(v.id("zebra"), kUnkId);
}

TEST(Vocab, FrequencyTieBreaksLexicographically) {
    // "b" and "a" appear once each; "a" must get the lower id.
    Vocabulary v = build_vocab({make_tags({{"b", "a"}})}, 64);
    EXPECT_LT(v.id("a"), v.id("b"));
    EXPECT_EQ(v.id("a"), 4);  // first slot after the reserved block
}

TEST(Vocab, CapsAtMaxSize) {
    std::vector<TagSet> corpus;
    for (int i = 0; i < 30; ++i) {
        corpus.push_back(make_tags({{("key" + std::to_string(i)).c_str(), "v"}}));
    }
    Vocabulary v = build_vocab(corpus, 10);
    EXPECT_EQ(v.size(), 10u);
}

// ---------------- tokenization ----------------

TEST(Tokenize, EmptyTagsetIsJustCls) {
    Vocabulary v = build_vocab(tiny_corpus(), 128);
    auto ids = tokenize_tagset(TagSet{}, v, 16);
    ASSERT_EQ(ids.size(), 1u);
    EXPECT_EQ(ids[0], kClsId);
}

TEST(Tokenize, OnewayYesLayout) {
    Vocabulary v;
    v.add_token("oneway");
    v.add_token("yes");
    auto ids = tokenize_tagset(make_tags({{"oneway", "yes"}}), v, 16);
    std::vector<int> expect = {kClsId, v.id("oneway"), v.id("yes"), kSepId};
    EXPECT_EQ(ids, expect);
}

TEST(Tokenize, PermutedTagInsertionGivesIdenticalSequence) {
    Vocabulary v = build_vocab(tiny_corpus(), 128);
    TagSet a;
    a.set("highway", "residential");
    a.set("name", "oak street");
    TagSet b;
    b.set("name", "oak street");
    b.set("highway", "residential");
    EXPECT_EQ(tokenize_tagset(a, v, 32), tokenize_tagset(b, v, 32));
}

TEST(Tokenize, TruncatesToMaxLen) {
    Vocabulary v = build_vocab(tiny_corpus(), 128);
    auto ids = tokenize_tagset(
        make_tags({{"highway", "residential"}, {"name", "oak street"}, {"lanes", "4"}}), v, 5);
    EXPECT_EQ(ids.size(), 5u);
    EXPECT_EQ(ids[0], kClsId);
}

// ---------------- encoding ----------------

TextEncoderConfig tiny_cfg() {
    TextEncoderConfig cfg;
    cfg.layers = 1;
    cfg.heads = 2;
    cfg.d_model = 8;
    cfg.d_ff = 16;
    cfg.max_len = 8;
    cfg.emb_dim = 6;
    cfg.max_vocab = 50;
    cfg.dropout = 0.0;
    return cfg;
}

TEST(Encode, OutputIsUnitNorm) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 7);
    for (const auto& t : tiny_corpus()) {
        auto e = enc.embed(t);
        double n2 = 0.0;
        for (double x : e) n2 += x * x;
        EXPECT_NEAR(std::sqrt(n2), 1.0, 1e-9);
    }
}

TEST(Encode, DeterministicAcrossCalls) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 7);
    auto t = make_tags({{"highway", "motorway"}, {"lanes", "4"}});
    EXPECT_EQ(enc.embed(t), enc.embed(t));
}

TEST(Encode, TagOrderDoesNotChangeEmbedding) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 7);
    TagSet a;
    a.set("highway", "residential");
    a.set("name", "oak street");
    TagSet b;
    b.set("name", "oak street");
    b.set("highway", "residential");
    EXPECT_EQ(enc.embed(a), enc.embed(b));
}

TEST(Encode, OversizedSequenceRejected) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 7);
    std::vector<int> ids(9, kUnkId);  // max_len is 8
    EXPECT_THROW(enc.encode_ids(ids), ContractError);
}

// Straight-line text-encoder forward built on the shared plain-loop oracle.
std::vector<double> oracle_text_forward(const TextEncoder& enc, const std::vector<int>& ids) {
    using oracle::Mat;
    const auto& reg = enc.params();
    const auto& cfg = enc.config();
    Mat tok = oracle::mat_of(reg.find("text.token_emb"));
    Mat pos = oracle::mat_of(reg.find("text.pos_emb"));
    Mat x(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        x[i] = tok[static_cast<std::size_t>(ids[i])];
        for (std::size_t j = 0; j < x[i].size(); ++j) x[i][j] += pos[i][j];
    }
    for (std::size_t l = 0; l < cfg.layers; ++l) {
        x = oracle::encoder_block(reg, "text.block" + std::to_string(l), cfg.heads, x);
    }
    x = oracle::layer_norm(x, oracle::vec_of(reg.find("text.final_ln.gamma")),
                           oracle::vec_of(reg.find("text.final_ln.beta")));
    Mat out = oracle::add_bias(oracle::matmul({x[0]}, oracle::mat_of(reg.find("text.out.w"))),
                               oracle::vec_of(reg.find("text.out.b")));
    double n2 = 0.0;
    for (double v : out[0]) n2 += v * v;
    const double nrm = std::max(std::sqrt(n2), 1e-12);
    for (double& v : out[0]) v /= nrm;
    return out[0];
}

TEST(Encode, MatchesStraightLineForwardOracle) {
    TextEncoderConfig cfg = tiny_cfg();
    cfg.layers = 2;  // exercise block stacking too
    TextEncoder enc(cfg, build_vocab(tiny_corpus(), 50), 1234);
    for (const auto& tags : tiny_corpus()) {
        auto ids = tokenize_tagset(tags, enc.vocab(), cfg.max_len);
        auto got = enc.encode_ids(ids).data();
        auto want = oracle_text_forward(enc, ids);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12);
    }
}

// ---------------- MNRL ----------------

TEST(Mnrl, BatchOfOneIsZero) {
    Tensor a({1, 3}, {1.0, 0.0, 0.0}, false);
    EXPECT_DOUBLE_EQ(mnr_loss(a, a, 20.0).item(), 0.0);
}

TEST(Mnrl, OrthonormalPairClosedForm) {
    Tensor a({2, 2}, {1.0, 0.0, 0.0, 1.0}, false);
    // S = I, s=1: each row's loss is -log(e / (e + 1)) = log(1 + e^-1).
    const double expect = std::log1p(std::exp(-1.0));
    EXPECT_NEAR(mnr_loss(a, a, 1.0).item(), expect, 1e-12);
}

TEST(Mnrl, PermutingBatchRowsLeavesLossUnchanged) {
    const double s = 0.5 * std::sqrt(2.0);
    Tensor a({3, 2}, {1.0, 0.0, 0.0, 1.0, s, s}, false);
    Tensor p({3, 2}, {0.0, 1.0, 1.0, 0.0, s, -s}, false);
    Tensor a2({3, 2}, {s, s, 1.0, 0.0, 0.0, 1.0}, false);
    Tensor p2({3, 2}, {s, -s, 0.0, 1.0, 1.0, 0.0}, false);
    EXPECT_NEAR(mnr_loss(a, p, 20.0).item(), mnr_loss(a2, p2, 20.0).item(), 1e-12);
}

TEST(Mnrl, RejectsNonUnitRows) {
    Tensor a({2, 2}, {1.0, 0.0, 0.0, 1.0}, false);
    Tensor bad({2, 2}, {2.0, 0.0, 0.0, 1.0}, false);
    EXPECT_THROW(mnr_loss(bad, a, 20.0), ContractError);
    EXPECT_THROW(mnr_loss(a, bad, 20.0), ContractError);
}

// Spec'd gradient invariant: tiny model, full MNRL objective, rel err < 1e-4.
TEST(Grad, MnrLossThroughEncoderMatchesFiniteDifferences) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 99);
    auto corpus = tiny_corpus();
    std::vector<std::vector<int>> anchor_ids, pos_ids;
    for (int i = 0; i < 3; ++i) {
        anchor_ids.push_back(tokenize_tagset(corpus[2 * i], enc.vocab(), 8));
        pos_ids.push_back(tokenize_tagset(corpus[2 * i + 1], enc.vocab(), 8));
    }
    auto loss_fn = [&]() {
        std::vector<Tensor> a, p;
        for (int i = 0; i < 3; ++i) {
            a.push_back(enc.encode_ids(anchor_ids[i]));
            p.push_back(enc.encode_ids(pos_ids[i]));
        }
        return mnr_loss(concat_rows(a), concat_rows(p), enc.config().scale);
    };
    std::vector<Tensor> leaves;
    for (const auto& np : enc.params().params()) leaves.push_back(np.tensor);
    auto res = gradcheck::check(leaves, loss_fn, 1e-4, 1e-5);
    EXPECT_TRUE(res.ok) << "worst " << res.worst << " at " << res.where;
}

// ---------------- pretraining ----------------

TEST(Pretrain, LossDecreasesOnSeparableCorpus) {
    auto corpus = build_corpus(tiny_corpus(), tiny_relevance());
    PretrainOptions opts;
    opts.epochs = 12;
    opts.batch_size = 4;
    opts.pairs_per_tagset = 4;
    auto res = pretrain(corpus, tiny_relevance(), tiny_cfg(), opts, 3);
    ASSERT_GE(res.epoch_mean_loss.size(), 2u);
    EXPECT_LT(res.epoch_mean_loss.back(), res.epoch_mean_loss.front());
}

TEST(Pretrain, BitwiseDeterministicUnderSeed) {
    auto corpus = build_corpus(tiny_corpus(), tiny_relevance());
    PretrainOptions opts;
    opts.epochs = 2;
    opts.batch_size = 4;
    opts.pairs_per_tagset = 2;
    auto r1 = pretrain(corpus, tiny_relevance(), tiny_cfg(), opts, 42);
    auto r2 = pretrain(corpus, tiny_relevance(), tiny_cfg(), opts, 42);
    ASSERT_EQ(r1.log.size(), r2.log.size());
    for (std::size_t i = 0; i < r1.log.size(); ++i) {
        EXPECT_EQ(r1.log[i].loss, r2.log[i].loss);
    }
    const auto& p1 = r1.encoder->params().params();
    const auto& p2 = r2.encoder->params().params();
    ASSERT_EQ(p1.size(), p2.size());
    for (std::size_t i = 0; i < p1.size(); ++i) {
        EXPECT_EQ(p1[i].tensor.data(), p2[i].tensor.data()) << p1[i].name;
    }
}

TEST(Pretrain, ZeroLearningRateKeepsInitWeights) {
    auto corpus = build_corpus(tiny_corpus(), tiny_relevance());
    PretrainOptions opts;
    opts.epochs = 1;
    opts.batch_size = 4;
    opts.pairs_per_tagset = 2;
    opts.lr = 0.0;
    auto res = pretrain(corpus, tiny_relevance(), tiny_cfg(), opts, 11);
    // Reconstruct the untouched initial weights from the same seed derivation.
    TextEncoder fresh(tiny_cfg(), build_vocab(corpus.tagsets, tiny_cfg().max_vocab),
                      Rng(11).child_seed("init"));
    const auto& pa = res.encoder->params().params();
    const auto& pb = fresh.params().params();
    ASSERT_EQ(pa.size(), pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        EXPECT_EQ(pa[i].tensor.data(), pb[i].tensor.data()) << pa[i].name;
    }
}

TEST(Io, CloneIsADeepCopy) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 5);
    TextEncoder copy = enc.clone();
    for (const auto& t : tiny_corpus()) {
        EXPECT_EQ(enc.embed(t), copy.embed(t));
    }
    // Mutating the clone's weights must not reach back into the original.
    auto snapshot = enc.params().find("text.out.w").data();
    for (auto& v : copy.params().find("text.out.w").data()) v += 1.0;
    EXPECT_EQ(enc.params().find("text.out.w").data(), snapshot);
}

// ---------------- persistence ----------------

TEST(Io, SaveLoadPreservesEmbeddings) {
    TextEncoder enc(tiny_cfg(), build_vocab(tiny_corpus(), 50), 5);
    const std::string path = ::testing::TempDir() + "/text_enc.sdtk";
    enc.save(path);
    TextEncoder back = TextEncoder::load(path);
    EXPECT_EQ(back.config().d_model, enc.config().d_model);
    EXPECT_EQ(back.vocab().size(), enc.vocab().size());
    for (const auto& t : tiny_corpus()) {
        EXPECT_EQ(enc.embed(t), back.embed(t));
    }
    std::remove(path.c_str());
    std::remove((path + ".meta").c_str());
    std::remove((path + ".vocab").c_str());
}

TEST(Io, EmbeddingDumpRoundTrip) {
    std::vector<std::vector<double>> rows = {{0.5, -1.25, 3.0}, {1e-9, 2.0, -0.0}};
    std::vector<TagSet> tags = {make_tags({{"highway", "residential"}}),
                                make_tags({{"oneway", "yes"}})};
    const std::string path = ::testing::TempDir() + "/emb.sdem";
    save_embedding_dump(path, rows, tags);
    auto dump = load_embedding_dump(path);
    EXPECT_EQ(dump.count, 2u);
    EXPECT_EQ(dump.dim, 3u);
    ASSERT_EQ(dump.rows.size(), 2u);
    EXPECT_EQ(dump.rows[0], rows[0]);
    EXPECT_EQ(dump.rows[1], rows[1]);
    std::remove(path.c_str());
    std::remove((path + ".jsonl").c_str());
}

}  // namespace
