// Copyright (C) 2026 The lmeec Authors
// SPDX-License-Identifier: Apache-2.0

// On-disk formats. All multi-byte values are little-endian.
//
//   masks        binary PGM (P5, maxval 255); pixel >= 128 is foreground
//   streams      "EECS" u32 version, u32 T h w C, then per record:
//                ego f64[h*w*C], ego mask bitset, exo f64[h*w*C], exo mask bitset
//                (bitsets are ceil(h*w/8) bytes, row-major, LSB-first)
//   parameters   "MOEP" u32 version, u32 c r s, f64 tensors in MoeParams order
//   bank         "EECM" u32 version, u8 view, u32 h w C M length, entries
//                location-major time-minor: f64[C] feature, f64 label, u32 first_t, u32 last_t
//   manifests    text, one record per line: frame_id view mask_path image_w image_h

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "lmeec/harness.hpp"
#include "lmeec/mask.hpp"
#include "lmeec/memory.hpp"
#include "lmeec/metrics.hpp"
#include "lmeec/mv_moe.hpp"

namespace lmeec::io {

inline constexpr std::uint32_t kStreamVersion = 1;
inline constexpr std::uint32_t kParamsVersion = 1;
inline constexpr std::uint32_t kBankVersion = 1;

class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::size_t offset)
        : std::runtime_error(what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_;
};

// ---------------------------------------------------------------------------
// Byte buffers

class Writer {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int b = 0; b < 4; ++b) buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xffU));
    }
    void u64(std::uint64_t v) {
        for (int b = 0; b < 8; ++b) buf_.push_back(static_cast<char>((v >> (8 * b)) & 0xffU));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
    void f64s(std::span<const double> vs) {
        for (double v : vs) f64(v);
    }
    const std::string& str() const { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(std::string data) : data_(std::move(data)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    bool at_end() const { return pos_ == data_.size(); }

    void need(std::size_t n, const std::string& what) const {
        if (remaining() < n) throw FormatError("truncated: " + what, pos_);
    }
    std::string_view bytes(std::size_t n, const std::string& what) {
        need(n, what);
        std::string_view v(data_.data() + pos_, n);
        pos_ += n;
        return v;
    }
    std::uint8_t u8(const std::string& what) {
        need(1, what);
        return static_cast<std::uint8_t>(data_[pos_++]);
    }
    std::uint32_t u32(const std::string& what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const std::string& what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + b])) << (8 * b);
        pos_ += 8;
        return v;
    }
    double f64(const std::string& what) { return std::bit_cast<double>(u64(what)); }
    void f64s(std::span<double> out, const std::string& what) {
        need(out.size() * 8, what);
        for (double& v : out) v = f64(what);
    }
    void expect_magic(std::string_view magic) {
        const std::size_t at = pos_;
        if (remaining() < magic.size() || bytes(magic.size(), "magic") != magic) {
            throw FormatError("bad magic, expected \"" + std::string(magic) + "\"", at);
        }
    }

private:
    std::string data_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), {});
}

/// Writes to a sibling temp file and renames it over the destination.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + tmp.string());
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) throw std::runtime_error("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// PGM masks

inline std::string encode_pgm(const Mask& m) {
    std::string out = "P5\n" + std::to_string(m.width()) + " " + std::to_string(m.height()) + "\n255\n";
    out.reserve(out.size() + m.size());
    for (std::size_t n = 0; n < m.size(); ++n) out.push_back(static_cast<char>(m.at(n) ? 255 : 0));
    return out;
}

inline Mask decode_pgm(const std::string& data) {
    std::size_t pos = 0;
    if (data.size() < 2 || data[0] != 'P') throw FormatError("not a PGM file", 0);
    if (data[1] != '5') throw FormatError("unsupported PGM magic 'P" + std::string(1, data[1]) + "', only P5 is read", 0);
    pos = 2;
    auto skip_space = [&] {
        while (pos < data.size()) {
            const char ch = data[pos];
            if (ch == '#') {
                while (pos < data.size() && data[pos] != '\n') ++pos;
            } else if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r') {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto number = [&](const char* what) -> std::size_t {
        skip_space();
        const std::size_t start = pos;
        std::size_t v = 0;
        while (pos < data.size() && data[pos] >= '0' && data[pos] <= '9') {
            v = v * 10 + static_cast<std::size_t>(data[pos] - '0');
            if (v > (1u << 24)) throw FormatError(std::string("PGM ") + what + " too large", start);
            ++pos;
        }
        if (pos == start) throw FormatError(std::string("malformed PGM header: expected ") + what, start);
        return v;
    };
    const std::size_t w = number("width");
    const std::size_t h = number("height");
    const std::size_t maxval_at = pos;
    const std::size_t maxval = number("maxval");
    if (maxval != 255) throw FormatError("PGM maxval must be 255, got " + std::to_string(maxval), maxval_at);
    if (pos >= data.size()) throw FormatError("truncated PGM header", pos);
    ++pos;  // single whitespace byte before the raster
    if (w == 0 || h == 0) throw FormatError("PGM has zero dimension", 0);
    if (data.size() - pos < w * h) {
        throw FormatError("truncated PGM payload: " + std::to_string(data.size() - pos) + " of " +
                              std::to_string(w * h) + " bytes",
                          data.size());
    }
    Mask m(h, w);
    for (std::size_t n = 0; n < w * h; ++n) m.set_at(n, static_cast<unsigned char>(data[pos + n]) >= 128);
    return m;
}

inline Mask read_mask(const std::filesystem::path& path) {
    try {
        return decode_pgm(read_file(path));
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what(), e.offset());
    }
}

inline void write_mask(const Mask& m, const std::filesystem::path& path) { write_file_atomic(path, encode_pgm(m)); }

// ---------------------------------------------------------------------------
// Streams

namespace detail {

inline void put_bitset(Writer& w, const Mask& m) {
    std::vector<std::uint8_t> bytes((m.size() + 7) / 8, 0);
    for (std::size_t n = 0; n < m.size(); ++n) {
        if (m.at(n)) bytes[n / 8] |= static_cast<std::uint8_t>(1u << (n % 8));
    }
    for (auto b : bytes) w.u8(b);
}

inline Mask get_bitset(Reader& r, std::size_t h, std::size_t w, const std::string& what) {
    const std::size_t nbytes = (h * w + 7) / 8;
    auto raw = r.bytes(nbytes, what);
    Mask m(h, w);
    for (std::size_t n = 0; n < h * w; ++n) m.set_at(n, ((static_cast<unsigned char>(raw[n / 8]) >> (n % 8)) & 1u) != 0);
    return m;
}

}  // namespace detail

inline std::string encode_stream(const std::vector<harness::StreamRecord>& records) {
    if (records.empty()) throw std::invalid_argument("encode_stream: empty stream");
    const auto& f = records.front().exo_feature;
    Writer w;
    w.bytes("EECS");
    w.u32(kStreamVersion);
    w.u32(static_cast<std::uint32_t>(records.size()));
    w.u32(static_cast<std::uint32_t>(f.height()));
    w.u32(static_cast<std::uint32_t>(f.width()));
    w.u32(static_cast<std::uint32_t>(f.channels()));
    for (const auto& rec : records) {
        if (!rec.ego_feature.same_shape(f) || !rec.exo_feature.same_shape(f)) {
            throw std::invalid_argument("encode_stream: record " + std::to_string(rec.t) + " has inconsistent geometry");
        }
        w.f64s(rec.ego_feature.data());
        detail::put_bitset(w, rec.ego_mask);
        w.f64s(rec.exo_feature.data());
        detail::put_bitset(w, rec.exo_gt_mask);
    }
    return w.str();
}

inline std::vector<harness::StreamRecord> decode_stream(std::string data) {
    Reader r(std::move(data));
    r.expect_magic("EECS");
    const std::size_t ver_at = r.offset();
    const auto version = r.u32("version");
    if (version != kStreamVersion) {
        throw FormatError("unsupported stream version " + std::to_string(version), ver_at);
    }
    const std::size_t T = r.u32("T"), h = r.u32("h"), w = r.u32("w"), C = r.u32("C");
    if (T == 0 || h == 0 || w == 0 || C == 0) throw FormatError("stream header has a zero dimension", 8);
    std::vector<harness::StreamRecord> out;
    out.reserve(T);
    for (std::size_t t = 0; t < T; ++t) {
        const std::string what = "record " + std::to_string(t) + " of " + std::to_string(T);
        harness::StreamRecord rec;
        rec.t = static_cast<std::uint32_t>(t + 1);
        std::vector<double> buf(h * w * C);
        r.f64s(buf, what);
        rec.ego_feature = FeatureMap(h, w, C, buf);
        rec.ego_mask = detail::get_bitset(r, h, w, what);
        r.f64s(buf, what);
        rec.exo_feature = FeatureMap(h, w, C, std::move(buf));
        rec.exo_gt_mask = detail::get_bitset(r, h, w, what);
        out.push_back(std::move(rec));
    }
    if (!r.at_end()) throw FormatError("trailing bytes after last record", r.offset());
    return out;
}

inline void write_stream(const std::vector<harness::StreamRecord>& records, const std::filesystem::path& path) {
    write_file_atomic(path, encode_stream(records));
}

inline std::vector<harness::StreamRecord> read_stream(const std::filesystem::path& path) {
    return decode_stream(read_file(path));
}

// ---------------------------------------------------------------------------
// MoE parameters

inline std::string encode_params(const moe::MoeParams& p) {
    p.validate();
    Writer w;
    w.bytes("MOEP");
    w.u32(kParamsVersion);
    w.u32(static_cast<std::uint32_t>(p.c));
    w.u32(static_cast<std::uint32_t>(p.r));
    w.u32(static_cast<std::uint32_t>(p.s));
    p.for_each_tensor([&w](const char*, const std::vector<double>& t) { w.f64s(t); });
    return w.str();
}

inline moe::MoeParams decode_params(std::string data) {
    Reader r(std::move(data));
    r.expect_magic("MOEP");
    const std::size_t ver_at = r.offset();
    const auto version = r.u32("version");
    if (version != kParamsVersion) throw FormatError("unsupported params version " + std::to_string(version), ver_at);
    const std::size_t c = r.u32("c"), rr = r.u32("r"), s = r.u32("s");
    if (c == 0 || rr == 0 || s == 0) throw FormatError("params header has a zero dimension", 8);
    auto p = moe::MoeParams::zeros(c, rr, s);
    p.for_each_tensor([&r](const char* name, std::vector<double>& t) { r.f64s(t, name); });
    if (!r.at_end()) throw FormatError("trailing bytes after parameters", r.offset());
    p.validate();
    return p;
}

inline void write_params(const moe::MoeParams& p, const std::filesystem::path& path) {
    write_file_atomic(path, encode_params(p));
}
inline moe::MoeParams read_params(const std::filesystem::path& path) { return decode_params(read_file(path)); }

// ---------------------------------------------------------------------------
// Bank snapshots

inline std::string encode_bank(const memory::MemoryBank& bank) {
    Writer w;
    w.bytes("EECM");
    w.u32(kBankVersion);
    w.u8(static_cast<std::uint8_t>(bank.view()));
    w.u32(static_cast<std::uint32_t>(bank.height()));
    w.u32(static_cast<std::uint32_t>(bank.width()));
    w.u32(static_cast<std::uint32_t>(bank.channels()));
    w.u32(static_cast<std::uint32_t>(bank.capacity()));
    w.u32(static_cast<std::uint32_t>(bank.length()));
    for (std::size_t p = 0; p < bank.locations(); ++p) {
        for (const auto& e : bank.slot(p)) {
            w.f64s(e.feature);
            w.f64(e.label);
            w.u32(e.first_t);
            w.u32(e.last_t);
        }
    }
    return w.str();
}

/// The snapshot does not carry the pinned-initial index; it is restored as the earliest stored first_t.
inline memory::MemoryBank decode_bank(std::string data) {
    Reader r(std::move(data));
    r.expect_magic("EECM");
    const std::size_t ver_at = r.offset();
    const auto version = r.u32("version");
    if (version != kBankVersion) throw FormatError("unsupported bank version " + std::to_string(version), ver_at);
    const std::size_t view_at = r.offset();
    const auto view = r.u8("view");
    if (view > 1) throw FormatError("invalid view tag " + std::to_string(view), view_at);
    const std::size_t h = r.u32("h"), w = r.u32("w"), C = r.u32("C"), M = r.u32("M"), len = r.u32("length");
    if (h == 0 || w == 0 || C == 0 || M == 0) throw FormatError("bank header has a zero dimension", view_at);
    if (len > M + 1) throw FormatError("bank length exceeds capacity", view_at);
    memory::MemoryBank bank(static_cast<memory::View>(view), h, w, C, M);
    std::vector<std::vector<memory::MemoryEntry>> slots(h * w);
    std::uint32_t latest = 0;
    std::optional<std::uint32_t> initial;
    for (std::size_t p = 0; p < h * w; ++p) {
        for (std::size_t n = 0; n < len; ++n) {
            const std::string what = "entry " + std::to_string(n) + " at location " + std::to_string(p);
            memory::MemoryEntry e;
            e.feature.resize(C);
            r.f64s(e.feature, what);
            e.label = r.f64(what);
            e.first_t = r.u32(what);
            e.last_t = r.u32(what);
            latest = std::max(latest, e.last_t);
            if (!initial || e.first_t < *initial) initial = e.first_t;
            slots[p].push_back(std::move(e));
        }
    }
    if (!r.at_end()) throw FormatError("trailing bytes after bank entries", r.offset());
    try {
        bank.restore(std::move(slots), initial, latest);
    } catch (const std::logic_error& e) {
        throw FormatError(std::string("bank snapshot violates invariants: ") + e.what(), 0);
    }
    return bank;
}

inline void write_bank(const memory::MemoryBank& bank, const std::filesystem::path& path) {
    write_file_atomic(path, encode_bank(bank));
}
inline memory::MemoryBank read_bank(const std::filesystem::path& path) { return decode_bank(read_file(path)); }

// ---------------------------------------------------------------------------
// Manifests

struct ManifestRecord {
    std::uint64_t frame_id = 0;
    memory::View view = memory::View::exo;
    std::filesystem::path mask_path;  // resolved against the manifest directory
    std::size_t image_w = 0, image_h = 0;
};

/// Blank lines and lines starting with '#' are skipped.
inline std::vector<ManifestRecord> parse_manifest(const std::string& text, const std::filesystem::path& base) {
    std::vector<ManifestRecord> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::map<memory::View, std::uint64_t> last;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream fields(line);
        ManifestRecord rec;
        std::string view, path;
        if (!(fields >> rec.frame_id >> view >> path >> rec.image_w >> rec.image_h)) {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                        ": expected 'frame_id view mask_path image_w image_h'");
        }
        std::string extra;
        if (fields >> extra) throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": trailing fields");
        if (view == "ego") {
            rec.view = memory::View::ego;
        } else if (view == "exo") {
            rec.view = memory::View::exo;
        } else {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) + ": view must be ego or exo");
        }
        if (auto it = last.find(rec.view); it != last.end() && rec.frame_id <= it->second) {
            throw std::invalid_argument("manifest line " + std::to_string(lineno) +
                                        ": frame ids must be strictly increasing per view");
        }
        last[rec.view] = rec.frame_id;
        rec.mask_path = std::filesystem::path(path).is_absolute() ? std::filesystem::path(path) : base / path;
        out.push_back(std::move(rec));
    }
    return out;
}

inline std::vector<ManifestRecord> read_manifest(const std::filesystem::path& path) {
    return parse_manifest(read_file(path), path.parent_path());
}

inline std::string format_manifest(const std::vector<ManifestRecord>& recs) {
    std::string out;
    for (const auto& r : recs) {
        out += std::to_string(r.frame_id) + " " + memory::to_string(r.view) + " " + r.mask_path.generic_string() + " " +
               std::to_string(r.image_w) + " " + std::to_string(r.image_h) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result rows

struct ResultRow {
    std::string experiment;
    std::optional<std::string> policy;
    std::optional<std::size_t> M, T;
    metrics::Summary summary;
    std::optional<double> wall_time_s;
};

inline nlohmann::ordered_json to_json(const ResultRow& row) {
    auto opt = [](const std::optional<double>& v) -> nlohmann::ordered_json {
        return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
    };
    nlohmann::ordered_json j;
    j["experiment"] = row.experiment;
    j["policy"] = row.policy ? nlohmann::ordered_json(*row.policy) : nlohmann::ordered_json(nullptr);
    j["M"] = row.M ? nlohmann::ordered_json(*row.M) : nlohmann::ordered_json(nullptr);
    j["T"] = row.T ? nlohmann::ordered_json(*row.T) : nlohmann::ordered_json(nullptr);
    j["mean_iou"] = opt(row.summary.mean_iou);
    j["mean_le"] = opt(row.summary.mean_le);
    j["mean_ca"] = opt(row.summary.mean_ca);
    j["ba"] = opt(row.summary.ba);
    j["association_accuracy"] = opt(row.summary.association);
    j["frames"] = row.summary.frames;
    j["undefined"] = {{"iou", row.summary.undefined_iou},
                      {"le", row.summary.undefined_le},
                      {"ca", row.summary.undefined_ca},
                      {"ba", row.summary.ba ? 0 : 1},
                      {"association_accuracy", row.summary.association ? 0 : 1}};
    j["wall_time_s"] = opt(row.wall_time_s);
    return j;
}

inline std::string to_jsonl(const std::vector<ResultRow>& rows) {
    std::string out;
    for (const auto& r : rows) out += to_json(r).dump() + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// Stream spec files (JSON objects; missing keys keep their defaults)

inline harness::StreamSpec stream_spec_from_json(const nlohmann::json& j) {
    harness::StreamSpec s;
    const std::vector<std::string> known = {"seed", "T", "h", "w", "C", "blob_radius", "drift_speed", "visible_run",
                                            "revisit_gap", "occlusion_windows", "appearance_drift",
                                            "appearance_rotation", "noise", "object_amplitude",
                                            "background_amplitude", "cross_view_correlation", "view_offset"};
    if (!j.is_object()) throw std::invalid_argument("stream spec must be a JSON object");
    for (const auto& [key, _] : j.items()) {
        if (std::find(known.begin(), known.end(), key) == known.end()) {
            throw std::invalid_argument("stream spec: unknown key '" + key + "'");
        }
    }
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("seed", s.seed);
    get("T", s.T);
    get("h", s.h);
    get("w", s.w);
    get("C", s.C);
    get("blob_radius", s.blob_radius);
    get("drift_speed", s.drift_speed);
    get("visible_run", s.visible_run);
    get("revisit_gap", s.revisit_gap);
    get("appearance_drift", s.appearance_drift);
    get("appearance_rotation", s.appearance_rotation);
    get("noise", s.noise);
    get("object_amplitude", s.object_amplitude);
    get("background_amplitude", s.background_amplitude);
    get("cross_view_correlation", s.cross_view_correlation);
    get("view_offset", s.view_offset);
    if (j.contains("occlusion_windows")) {
        s.occlusion_windows.clear();
        for (const auto& win : j.at("occlusion_windows")) {
            s.occlusion_windows.emplace_back(win.at(0).get<std::size_t>(), win.at(1).get<std::size_t>());
        }
    }
    s.validate();
    return s;
}

inline harness::StreamSpec read_stream_spec(const std::filesystem::path& path) {
    try {
        return stream_spec_from_json(nlohmann::json::parse(read_file(path)));
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(path.string() + ": " + e.what());
    }
}

}  // namespace lmeec::io
