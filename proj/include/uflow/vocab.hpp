#pragma once

// Closed character-level vocabulary: 256 base symbols (printable ASCII plus
// filler) followed by the special tokens. Index = line number in the vocab file.

#include <fstream>
#include <sstream>

#include "uflow/tensor.hpp"

namespace uflow {

struct Vocab {
    static constexpr int kBaseSymbols = 256;
    static constexpr int kPad = kBaseSymbols + 0;
    static constexpr int kEot = kBaseSymbols + 1;
    static constexpr int kBoi = kBaseSymbols + 2;
    static constexpr int kEoi = kBaseSymbols + 3;
    static constexpr int kNullCond = kBaseSymbols + 4;
    static constexpr int kSize = kBaseSymbols + 5;

    static int size() { return kSize; }

    static bool is_char(int id) { return id >= 0 && id < kBaseSymbols; }

    static int encode_char(char c) {
        unsigned char u = static_cast<unsigned char>(c);
        if (u >= 32 && u <= 126) return u - 32;
        throw std::invalid_argument("vocab: unencodable character");
    }

    static char decode_char(int id) {
        if (id >= 0 && id < 95) return static_cast<char>(id + 32);
        throw std::invalid_argument("vocab: id is not a printable symbol");
    }

    static std::vector<int> encode(const std::string& s) {
        std::vector<int> out;
        out.reserve(s.size());
        for (char c : s) out.push_back(encode_char(c));
        return out;
    }

    static std::string decode(const std::vector<int>& ids) {
        std::string out;
        for (int id : ids) {
            if (id < 95)
                out.push_back(decode_char(id));
            else if (id < kBaseSymbols)
                out += "<sym" + std::to_string(id) + ">";
            else
                out += special_name(id);
        }
        return out;
    }

    static std::string special_name(int id) {
        switch (id) {
            case kPad: return "<pad>";
            case kEot: return "<eot>";
            case kBoi: return "<boi>";
            case kEoi: return "<eoi>";
            case kNullCond: return "<null>";
            default: return "<unk" + std::to_string(id) + ">";
        }
    }

    // One symbol per line; index = line number.
    static void write_file(const std::string& path) {
        std::ofstream os(path);
        if (!os) throw std::runtime_error("vocab: cannot write " + path);
        for (int id = 0; id < kSize; ++id) {
            if (id < 95)
                os << decode_char(id) << "\n";
            else if (id < kBaseSymbols)
                os << "<sym" << id << ">\n";
            else
                os << special_name(id) << "\n";
        }
    }
};

}  // namespace uflow
