#include <catch2/catch_amalgamated.hpp>

#include "uflow/data.hpp"

using namespace uflow;

TEST_CASE("vocab encodes printable ascii and round-trips") {
    std::string s = "act dx=+0.500 dy=-1.250 dyaw=+0.000";
    auto ids = Vocab::encode(s);
    REQUIRE(ids.size() == s.size());
    for (int id : ids) CHECK(id < Vocab::kBaseSymbols);
    CHECK(Vocab::decode(ids) == s);
    CHECK(Vocab::size() == 261);
    CHECK_THROWS(Vocab::encode_char('\n'));
}

TEST_CASE("vocab file has one symbol per line") {
    std::string path = "vocab_test.txt";
    Vocab::write_file(path);
    std::ifstream is(path);
    std::string line;
    int count = 0;
    std::string last;
    while (std::getline(is, line)) {
        last = line;
        ++count;
    }
    CHECK(count == Vocab::kSize);
    CHECK(last == "<null>");
    std::remove(path.c_str());
}

TEST_CASE("ppm round trip") {
    Rng rng(3);
    Image img(5, 7);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.rgb) v = u(rng);
    std::string path = "ppm_test.ppm";
    write_ppm(path, img);
    Image back = read_ppm(path);
    REQUIRE(back.h == 5);
    REQUIRE(back.w == 7);
    for (size_t i = 0; i < img.rgb.size(); ++i)
        CHECK(std::abs(back.rgb[i] - img.rgb[i]) <= 0.5f / 255.0f + 1e-6f);
    std::remove(path.c_str());
}

TEST_CASE("patchify shape arithmetic") {
    // 16x16 image with 8-pixel patches: 4 tokens of dimension 192
    auto spec = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 16, 8);
    Image img(16, 16);
    Tensor t = patchify(img, spec);
    CHECK(t.rows() == 4);
    CHECK(t.cols() == 192);
    CHECK(spec.tokens_per_frame() == 4);
    CHECK(spec.d_latent() == 192);
    CHECK_THROWS(EncoderSpec::make(EncoderSpec::Mode::RawPixel, 16, 5));
    Image wrong(8, 8);
    CHECK_THROWS(patchify(wrong, spec));
}

TEST_CASE("raw-mode patchify round trip is exact") {
    auto spec = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 16, 4);
    Rng rng(11);
    Image img(16, 16);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.rgb) v = u(rng);
    Image back = unpatchify(patchify(img, spec), spec);
    for (size_t i = 0; i < img.rgb.size(); ++i) CHECK(back.rgb[i] == Catch::Approx(img.rgb[i]).margin(1e-6));
}

TEST_CASE("projected mode: orthogonality oracle, then round trip and norms") {
    auto spec = EncoderSpec::make(EncoderSpec::Mode::Projected, 16, 4, 42);
    int d = spec.d_latent();
    // oracle first: P^T P = I
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = 0;
            for (int r = 0; r < d; ++r) acc += static_cast<double>(spec.projection.at(r, i)) * spec.projection.at(r, j);
            CHECK(std::abs(acc - (i == j ? 1.0 : 0.0)) < 1e-5);
        }
    Rng rng(12);
    Image img(16, 16);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : img.rgb) v = u(rng);
    Tensor proj = patchify(img, spec);
    Image back = unpatchify(proj, spec);
    for (size_t i = 0; i < img.rgb.size(); ++i) CHECK(std::abs(back.rgb[i] - img.rgb[i]) < 1e-5f);

    // norm preservation vs raw mode
    auto raw = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 16, 4);
    Tensor flat = patchify(img, raw);
    for (int r = 0; r < flat.rows(); ++r) {
        double nr = 0, np = 0;
        for (int c = 0; c < d; ++c) {
            nr += static_cast<double>(flat.at(r, c)) * flat.at(r, c);
            np += static_cast<double>(proj.at(r, c)) * proj.at(r, c);
        }
        CHECK(std::abs(std::sqrt(nr) - std::sqrt(np)) < 1e-4);
    }
}

TEST_CASE("patchify is linear in pixel values") {
    auto spec = EncoderSpec::make(EncoderSpec::Mode::Projected, 8, 4, 7);
    Rng rng(5);
    std::uniform_real_distribution<float> u(0.0f, 0.5f);
    Image a(8, 8), b(8, 8), mix(8, 8);
    for (size_t i = 0; i < a.rgb.size(); ++i) {
        a.rgb[i] = u(rng);
        b.rgb[i] = u(rng);
        mix.rgb[i] = 0.5f * a.rgb[i] + 0.5f * b.rgb[i];
    }
    Tensor ta = patchify(a, spec), tb = patchify(b, spec), tm = patchify(mix, spec);
    // affine in pixels: patchify(mix) = (patchify(a)+patchify(b))/2 since the
    // [-1,1] shift is itself affine with matching weights
    for (size_t i = 0; i < tm.data.size(); ++i)
        CHECK(tm.data[i] == Catch::Approx(0.5f * ta.data[i] + 0.5f * tb.data[i]).margin(1e-5));
}

TEST_CASE("assemble_sequence layout and frame table") {
    auto spec = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 8, 4);  // 4 tokens/frame
    // caption of 3, one frame, caption of 2 -> length 3 + (4+2) + 2 = 11
    Tensor frame = Tensor::zeros({4, spec.d_latent()});
    MixedSequence seq = assemble_sequence(
        {SeqPart::text_span({1, 2, 3}), SeqPart::frame_latents(frame), SeqPart::text_span({4, 5})},
        spec.tokens_per_frame());
    REQUIRE(seq.length() == 11);
    REQUIRE(seq.frame_count() == 1);
    CHECK(seq.frame_table.at(0).begin == 4);
    CHECK(seq.frame_table.at(0).end == 7);
    CHECK(seq.items[3].kind == TokenItem::Kind::Boi);
    CHECK(seq.items[8].kind == TokenItem::Kind::Eoi);
    std::vector<uint8_t> expect_mask = {0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0};
    CHECK(seq.vision_mask == expect_mask);

    SECTION("revalidate is the identity on a well-formed sequence") {
        auto table = seq.frame_table;
        auto mask = seq.vision_mask;
        seq.revalidate(spec.tokens_per_frame());
        CHECK(seq.frame_table.at(0).begin == table.at(0).begin);
        CHECK(seq.frame_table.at(0).end == table.at(0).end);
        CHECK(seq.vision_mask == mask);
    }
    SECTION("malformed sequences are rejected") {
        MixedSequence bad = seq;
        bad.items[5] = TokenItem::text(9);  // text inside a frame
        CHECK_THROWS(bad.revalidate(spec.tokens_per_frame()));
        MixedSequence trunc = seq;
        trunc.items.pop_back();
        trunc.items.pop_back();
        trunc.items.pop_back();  // drop EOI
        CHECK_THROWS(trunc.revalidate(spec.tokens_per_frame()));
    }
    CHECK_THROWS(assemble_sequence({}, 4));
    Tensor small = Tensor::zeros({3, spec.d_latent()});
    CHECK_THROWS(assemble_sequence({SeqPart::frame_latents(small)}, 4));
}

TEST_CASE("action codec") {
    CHECK(format_action({0.5f, 0.0f, 0.0f}) == "act dx=+0.500 dy=+0.000 dyaw=+0.000");
    CHECK(format_action({-0.25f, 1.0f, -0.5f}) == "act dx=-0.250 dy=+1.000 dyaw=-0.500");
    ActionDelta a = decode_action_tokens(encode_action({0.2f, 0.0f, -0.5f}));
    CHECK(a.dx == Catch::Approx(0.2f));
    CHECK(a.dyaw == Catch::Approx(-0.5f));
    CHECK_THROWS(encode_action({2.5f, 0.0f, 0.0f}));
    CHECK_THROWS(decode_action("walk north"));

    SECTION("decode inverts encode at 3-decimal precision over random actions") {
        Rng rng(21);
        std::uniform_real_distribution<float> u(-2.0f, 2.0f);
        for (int i = 0; i < 1000; ++i) {
            ActionDelta x{u(rng), u(rng), u(rng)};
            ActionDelta y = decode_action(format_action(x));
            CHECK(std::abs(y.dx - x.dx) <= 5e-4f);
            CHECK(std::abs(y.dy - x.dy) <= 5e-4f);
            CHECK(std::abs(y.dyaw - x.dyaw) <= 5e-4f);
        }
    }
}

TEST_CASE("data sources produce well-formed samples") {
    auto enc = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 16, 4);
    DataSpec spec = DataSpec::make(enc, 1);

    SECTION("text source is pure text ending in EOT") {
        Sample s = make_text_sample(spec, 7, 0);
        CHECK(s.seq.frame_count() == 0);
        CHECK(s.seq.items.back().id == Vocab::kEot);
        // same (seed, index) is reproducible; different index differs
        Sample again = make_text_sample(spec, 7, 0);
        REQUIRE(again.seq.length() == s.seq.length());
        Sample other = make_text_sample(spec, 7, 1);
        bool same = other.seq.length() == s.seq.length();
        if (same)
            for (int i = 0; i < s.seq.length(); ++i) same = same && other.seq.items[i].id == s.seq.items[i].id;
        CHECK_FALSE(same);
    }
    SECTION("image-text source carries one frame and a caption") {
        for (uint64_t idx = 0; idx < 20; ++idx) {
            Sample s = make_image_text_sample(spec, 7, idx);
            CHECK(s.seq.frame_count() == 1);
            if (s.task == TaskTag::Gen) {
                REQUIRE(s.cond_begin == 0);
                CHECK(s.cond_end > s.cond_begin);
                CHECK(s.seq.items[s.cond_end + 1].kind == TokenItem::Kind::Boi);
            } else {
                CHECK(s.seq.items[0].kind == TokenItem::Kind::Boi);
            }
        }
    }
    SECTION("video source has the configured frame count") {
        Sample s = make_video_sample(spec, 7, 3);
        CHECK(s.seq.frame_count() == spec.video_frames);
        CHECK(s.seq.length() == spec.video_frames * (enc.tokens_per_frame() + 2));
    }
    SECTION("action source matches the navigation layout: 4 frames, text, 1 frame") {
        Sample s = make_action_sample(spec, 7, 5);
        REQUIRE(s.seq.frame_count() == 5);
        int tpf = enc.tokens_per_frame();
        for (int f = 0; f < 4; ++f) {
            CHECK(s.seq.frame_table.at(f).begin == f * (tpf + 2) + 1);
        }
        // action text sits between frame 3's EOI and frame 4's BOI
        int text_begin = 4 * (tpf + 2);
        CHECK(s.seq.items[text_begin].kind == TokenItem::Kind::Text);
        CHECK(s.cond_begin == text_begin);
        std::vector<int> ids;
        for (int p = s.cond_begin; p <= s.cond_end; ++p) ids.push_back(s.seq.items[p].id);
        ActionDelta a = decode_action_tokens(ids);
        // decoded action reproduces the generator's ground truth
        NavSample nav = make_nav_episode(spec, 7, 5);
        CHECK(std::abs(a.dx - nav.action.dx) <= 5e-4f);
        CHECK(s.seq.items[s.cond_end + 1].kind == TokenItem::Kind::Boi);
        CHECK(s.seq.frame_table.at(4).end == s.seq.length() - 2);
    }
}

TEST_CASE("mixture sampling follows the weights") {
    auto enc = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 8, 4);
    DataSpec spec = DataSpec::make(enc, 1);
    MixtureSpec mix;
    mix.weights[0] = 0.5f;
    mix.weights[1] = 0.5f;
    mix.weights[2] = 0.0f;
    mix.weights[3] = 0.0f;
    Rng rng(99);
    int text = 0, total = 10000;
    for (int chunk = 0; chunk < total / 100; ++chunk) {
        auto batch = sample_batch(spec, mix, rng, 100, 64);
        for (const auto& s : batch) {
            CHECK((s.source == SourceTag::Text || s.source == SourceTag::Video));
            if (s.source == SourceTag::Text) ++text;
        }
    }
    double frac = static_cast<double>(text) / total;
    CHECK(frac > 0.47);
    CHECK(frac < 0.53);

    MixtureSpec bad;
    bad.weights[0] = -1.0f;
    CHECK_THROWS(bad.validate());
    MixtureSpec zero;
    for (auto& w : zero.weights) w = 0.0f;
    CHECK_THROWS(zero.validate());
}

TEST_CASE("fit_to_length pads and truncates at frame granularity") {
    auto enc = EncoderSpec::make(EncoderSpec::Mode::RawPixel, 8, 4);  // 4 tokens/frame
    DataSpec spec = DataSpec::make(enc, 1);
    int tpf = enc.tokens_per_frame();

    Sample s = make_action_sample(spec, 3, 0);  // 5 frames + action text
    int full = s.seq.length();
    SECTION("padding fills with pad tokens") {
        Sample padded = s;
        fit_to_length(padded, full + 5, tpf);
        REQUIRE(padded.seq.length() == full + 5);
        for (int p = full; p < full + 5; ++p) CHECK(padded.seq.items[p].id == Vocab::kPad);
    }
    SECTION("truncation never splits a frame") {
        Sample cut = s;
        // a cap that lands inside the second frame
        fit_to_length(cut, tpf + 2 + 3, tpf);
        REQUIRE(cut.seq.length() == tpf + 2 + 3);
        CHECK(cut.seq.frame_count() == 1);
        for (int p = tpf + 2; p < cut.seq.length(); ++p)
            CHECK(cut.seq.items[p].id == Vocab::kPad);
    }
}

TEST_CASE("dataset manifest is line-delimited source/seed/index") {
    std::string path = "manifest_test.txt";
    write_manifest(path, {{SourceTag::Text, 7, 0}, {SourceTag::Action, 9, 12}});
    std::ifstream is(path);
    std::string l1, l2;
    std::getline(is, l1);
    std::getline(is, l2);
    CHECK(l1 == "text 7 0");
    CHECK(l2 == "action 9 12");
    std::remove(path.c_str());
}
