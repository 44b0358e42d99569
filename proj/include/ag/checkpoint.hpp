#pragma once

// Named-tensor checkpoint file.
//
// Layout: a text manifest followed by raw data.
//   line 1: "AGCKPT 1"
//   line 2: tensor count
//   then one line per tensor: name, rank, dims...
//   then a line "DATA"
//   then each tensor's values as little-endian float32, in manifest order.
//
// Values are stored as float32 regardless of the in-memory scalar type.

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ag/array.hpp"

namespace ag {

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const Arr<T>*>>& tensors) {
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "save_checkpoint: cannot open " + path);
    f << "AGCKPT 1\n" << tensors.size() << "\n";
    for (const auto& [name, arr] : tensors) {
        check(name.find_first_of(" \n") == std::string::npos, "save_checkpoint: bad name '" + name + "'");
        f << name << ' ' << arr->shape.size();
        for (int64_t d : arr->shape) f << ' ' << d;
        f << '\n';
    }
    f << "DATA\n";
    std::vector<float> buf;
    for (const auto& [name, arr] : tensors) {
        buf.assign(arr->data.begin(), arr->data.end());
        f.write(reinterpret_cast<const char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
    }
    check(f.good(), "save_checkpoint: write failed for " + path);
}

template <typename T>
std::vector<std::pair<std::string, Arr<T>>> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "load_checkpoint: cannot open " + path);
    std::string magic;
    int version = 0;
    f >> magic >> version;
    check(magic == "AGCKPT", "load_checkpoint: bad magic in " + path);
    check(version == 1, "load_checkpoint: unsupported version " + std::to_string(version));
    size_t count = 0;
    f >> count;
    std::vector<std::pair<std::string, Arr<T>>> out;
    out.reserve(count);
    for (size_t i = 0; i < count; ++i) {
        std::string name;
        size_t rank = 0;
        f >> name >> rank;
        check(f.good() && rank <= 8, "load_checkpoint: corrupt manifest in " + path);
        Shape s(rank);
        for (size_t d = 0; d < rank; ++d) f >> s[d];
        out.emplace_back(std::move(name), Arr<T>(s));
    }
    std::string sentinel;
    f >> sentinel;
    check(sentinel == "DATA", "load_checkpoint: missing DATA sentinel in " + path);
    f.get();  // newline after sentinel
    std::vector<float> buf;
    for (auto& [name, arr] : out) {
        buf.resize(static_cast<size_t>(arr.numel()));
        f.read(reinterpret_cast<char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * sizeof(float)));
        check(f.gcount() == static_cast<std::streamsize>(buf.size() * sizeof(float)),
              "load_checkpoint: truncated data for tensor '" + name + "' in " + path);
        for (size_t k = 0; k < buf.size(); ++k) arr.data[k] = static_cast<T>(buf[k]);
    }
    return out;
}

}  // namespace ag
