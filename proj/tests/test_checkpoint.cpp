#include <cstdio>
#include <filesystem>
#include <fstream>

#include "ag/checkpoint.hpp"
#include "doctest.h"

using ag::Arr;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_SUITE("checkpoint") {

TEST_CASE("save/load round-trips names, shapes and float32 values") {
    Arr<float> a({2, 3}, {1.0f, -2.5f, 3.25f, 0.0f, 7.5f, -0.125f});
    Arr<float> b({4}, {0.5f, 1.5f, 2.5f, 3.5f});
    std::string path = temp_path("ckpt_roundtrip.bin");
    ag::save_checkpoint<float>(path, {{"layer.w", &a}, {"layer.b", &b}});
    auto loaded = ag::load_checkpoint<float>(path);
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].first == "layer.w");
    CHECK(loaded[0].second.shape == a.shape);
    for (int64_t i = 0; i < a.numel(); ++i) CHECK(loaded[0].second.data[i] == a.data[i]);
    CHECK(loaded[1].first == "layer.b");
    for (int64_t i = 0; i < b.numel(); ++i) CHECK(loaded[1].second.data[i] == b.data[i]);
    std::remove(path.c_str());
}

TEST_CASE("doubles survive through the float32 container exactly when representable") {
    Arr<double> a({3}, {0.5, -1.25, 1024.0});
    std::string path = temp_path("ckpt_double.bin");
    ag::save_checkpoint<double>(path, {{"p", &a}});
    auto loaded = ag::load_checkpoint<double>(path);
    REQUIRE(loaded.size() == 1);
    for (int64_t i = 0; i < 3; ++i) CHECK(loaded[0].second.data[i] == a.data[i]);
    std::remove(path.c_str());
}

TEST_CASE("bad magic, truncation and missing files fail loudly") {
    std::string path = temp_path("ckpt_bad.bin");
    {
        std::ofstream f(path);
        f << "NOTCKPT 1\n0\nDATA\n";
    }
    CHECK_THROWS_WITH_AS((void)ag::load_checkpoint<float>(path), doctest::Contains("magic"),
                         std::invalid_argument);
    {
        Arr<float> a({8});
        ag::save_checkpoint<float>(path, {{"p", &a}});
        auto sz = std::filesystem::file_size(path);
        std::filesystem::resize_file(path, sz - 8);
    }
    CHECK_THROWS_WITH_AS((void)ag::load_checkpoint<float>(path), doctest::Contains("truncated"),
                         std::invalid_argument);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)ag::load_checkpoint<float>(temp_path("ckpt_nonexistent.bin")),
                    std::invalid_argument);
}

}  // TEST_SUITE
