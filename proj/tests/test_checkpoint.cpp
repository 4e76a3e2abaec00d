#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "vidcap/checkpoint.hpp"
#include "vidcap/rng.hpp"

using namespace vidcap;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    Rng rng = Rng::stream(51, "ck");
    CheckpointData ckpt;
    ckpt.header = {{"step", 42}, {"phase", "pretrain"}, {"seed", 7}, {"config", {{"d", 16}}}};
    ckpt.arrays.emplace_back("w", Tensor::randn({3, 5}, rng));
    ckpt.arrays.emplace_back("adam.m.w", Tensor::randn({3, 5}, rng, 1e-4));
    ckpt.arrays.emplace_back("alpha", Tensor({2}, {0.0, -0.75}));
    // awkward values must survive exactly
    ckpt.arrays.emplace_back("edge", Tensor({4}, {0.0, -0.0, 1e-308, 0.1 + 0.2}));

    const std::string path = temp_path("vidcap_ckpt_test.bin");
    save_checkpoint(ckpt, path);
    CheckpointData back = load_checkpoint(path);

    CHECK(back.header == ckpt.header);
    REQUIRE(back.arrays.size() == ckpt.arrays.size());
    for (std::size_t i = 0; i < ckpt.arrays.size(); ++i) {
        CHECK(back.arrays[i].first == ckpt.arrays[i].first);
        CHECK(back.arrays[i].second.shape == ckpt.arrays[i].second.shape);
        const auto& a = ckpt.arrays[i].second.data;
        const auto& b = back.arrays[i].second.data;
        REQUIRE(a.size() == b.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            // compare bit patterns so -0.0 vs 0.0 cannot slip through
            CHECK(std::bit_cast<std::uint64_t>(a[k]) == std::bit_cast<std::uint64_t>(b[k]));
        }
    }
    CHECK(back.find("alpha") != nullptr);
    CHECK(back.find("missing") == nullptr);
    std::filesystem::remove(path);
}

TEST_CASE("corruption and truncation are detected") {
    Rng rng = Rng::stream(52, "ckc");
    CheckpointData ckpt;
    ckpt.header = {{"step", 1}};
    ckpt.arrays.emplace_back("w", Tensor::randn({4, 4}, rng));
    const std::string path = temp_path("vidcap_ckpt_corrupt.bin");
    save_checkpoint(ckpt, path);

    std::string raw;
    {
        std::ifstream in(path, std::ios::binary);
        raw.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    }

    SECTION("flipped byte fails the checksum") {
        std::string bad = raw;
        bad[bad.size() / 2] = static_cast<char>(bad[bad.size() / 2] ^ 0x40);
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    SECTION("truncated file is rejected") {
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(raw.data(), static_cast<std::streamsize>(raw.size() / 2));
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    SECTION("wrong magic is rejected") {
        std::string bad = raw;
        bad[0] = 'X';
        std::ofstream(path, std::ios::binary | std::ios::trunc).write(bad.data(), static_cast<std::streamsize>(bad.size()));
        CHECK_THROWS_AS(load_checkpoint(path), DataError);
    }
    SECTION("missing file is rejected") { CHECK_THROWS_AS(load_checkpoint(path + ".nope"), DataError); }
    std::filesystem::remove(path);
}

TEST_CASE("empty checkpoint is valid") {
    CheckpointData ckpt;
    ckpt.header = {{"note", "empty"}};
    const std::string path = temp_path("vidcap_ckpt_empty.bin");
    save_checkpoint(ckpt, path);
    CheckpointData back = load_checkpoint(path);
    CHECK(back.arrays.empty());
    CHECK(back.header["note"] == "empty");
    std::filesystem::remove(path);
}
