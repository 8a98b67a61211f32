#pragma once

// Binary dataset format (little-endian):
//
//   header, 32 bytes
//     0  char[4]  magic "CLWX"
//     4  u16      format version
//     6  u16      K
//     8  u64      sample count
//    16  u32      flags (bit 0: labeled)
//    20  u32      random generator id
//    24  u8[8]    reserved, zero
//   records
//     u64 sample_id, u32 episode_id, K*K*2 f64 (row-major, re then im)
//     labeled only: K f64 power label, 1 f64 oracle rate

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "clwrx/channel.hpp"
#include "clwrx/error.hpp"
#include "clwrx/rng.hpp"
#include "clwrx/wmmse.hpp"

namespace clwrx {

inline constexpr std::array<char, 4> kDatasetMagic{'C', 'L', 'W', 'X'};
inline constexpr std::uint16_t kDatasetVersion = 1;
inline constexpr std::uint32_t kFlagLabeled = 1u;
inline constexpr std::size_t kDatasetHeaderSize = 32;

struct DatasetHeader {
    std::uint16_t version = kDatasetVersion;
    std::uint16_t k_pairs = 0;
    std::uint64_t count = 0;
    std::uint32_t flags = 0;
    std::uint32_t generator_id = kGeneratorId;

    bool labeled() const noexcept { return (flags & kFlagLabeled) != 0; }
};

// Contents of a dataset file. `samples` always holds the channels; label
// fields are populated only when the labeled flag is set.
struct Dataset {
    DatasetHeader header;
    std::vector<LabeledSample> samples;

    bool labeled() const noexcept { return header.labeled(); }

    std::vector<ChannelSample> channels() const {
        std::vector<ChannelSample> out;
        out.reserve(samples.size());
        for (const auto& s : samples) out.push_back(s.channel);
        return out;
    }
};

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    auto bits = std::bit_cast<U>(value);
    char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
    os.write(buf, sizeof(T));
}

template <class T>
T get_le(std::istream& is, const char* field) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint16_t>>;
    unsigned char buf[sizeof(T)];
    if (!is.read(reinterpret_cast<char*>(buf), sizeof(T)))
        throw DataError(std::string("dataset: truncated input reading ") + field);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(buf[i]) << (8 * i);
    return std::bit_cast<T>(bits);
}

inline void write_header(std::ostream& os, const DatasetHeader& h) {
    os.write(kDatasetMagic.data(), 4);
    put_le(os, h.version);
    put_le(os, h.k_pairs);
    put_le(os, h.count);
    put_le(os, h.flags);
    put_le(os, h.generator_id);
    const char reserved[8]{};
    os.write(reserved, sizeof reserved);
}

inline void write_channel_record(std::ostream& os, const ChannelSample& s) {
    put_le(os, s.sample_id());
    put_le(os, s.episode_id());
    for (const auto& c : s.data()) {
        put_le(os, c.real());
        put_le(os, c.imag());
    }
}

}  // namespace detail

inline void write_dataset(std::ostream& os, std::span<const ChannelSample> samples) {
    DatasetHeader h;
    h.k_pairs = samples.empty() ? 0 : static_cast<std::uint16_t>(samples.front().k_pairs());
    h.count = samples.size();
    detail::write_header(os, h);
    for (const auto& s : samples) {
        if (s.k_pairs() != h.k_pairs) throw DataError("dataset: mixed K within one dataset");
        detail::write_channel_record(os, s);
    }
}

inline void write_dataset(std::ostream& os, std::span<const LabeledSample> samples) {
    DatasetHeader h;
    h.k_pairs = samples.empty() ? 0 : static_cast<std::uint16_t>(samples.front().channel.k_pairs());
    h.count = samples.size();
    h.flags = kFlagLabeled;
    detail::write_header(os, h);
    for (const auto& s : samples) {
        if (s.channel.k_pairs() != h.k_pairs || s.label_power.size() != h.k_pairs)
            throw DataError("dataset: mixed K within one dataset");
        detail::write_channel_record(os, s.channel);
        for (double p : s.label_power) detail::put_le(os, p);
        detail::put_le(os, s.oracle_rate);
    }
}

inline DatasetHeader read_header(std::istream& is) {
    std::array<char, 4> magic{};
    if (!is.read(magic.data(), 4)) throw DataError("dataset: truncated header (magic)");
    if (magic != kDatasetMagic) throw DataError("dataset: bad magic, expected \"CLWX\"");
    DatasetHeader h;
    h.version = detail::get_le<std::uint16_t>(is, "header field 'version'");
    if (h.version != kDatasetVersion)
        throw DataError("dataset: unsupported version " + std::to_string(h.version) + " in header field 'version'");
    h.k_pairs = detail::get_le<std::uint16_t>(is, "header field 'K'");
    h.count = detail::get_le<std::uint64_t>(is, "header field 'sample count'");
    h.flags = detail::get_le<std::uint32_t>(is, "header field 'flags'");
    if ((h.flags & ~kFlagLabeled) != 0)
        throw DataError("dataset: unknown bits set in header field 'flags'");
    h.generator_id = detail::get_le<std::uint32_t>(is, "header field 'generator id'");
    char reserved[8];
    if (!is.read(reserved, sizeof reserved)) throw DataError("dataset: truncated header (reserved)");
    if (h.count > 0 && h.k_pairs == 0) throw DataError("dataset: header field 'K' is zero for a non-empty dataset");
    return h;
}

inline Dataset read_dataset(std::istream& is) {
    Dataset ds;
    ds.header = read_header(is);
    const std::size_t k = ds.header.k_pairs;
    ds.samples.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(ds.header.count, 1u << 20)));
    for (std::uint64_t n = 0; n < ds.header.count; ++n) {
        LabeledSample s;
        const auto sid = detail::get_le<std::uint64_t>(is, "record sample_id");
        const auto eid = detail::get_le<std::uint32_t>(is, "record episode_id");
        s.channel = ChannelSample(k, eid, sid);
        for (auto& c : s.channel.data()) {
            const double re = detail::get_le<double>(is, "record channel");
            const double im = detail::get_le<double>(is, "record channel");
            c = {re, im};
        }
        if (!s.channel.finite()) throw DataError("dataset: non-finite channel in sample " + std::to_string(sid));
        if (ds.labeled()) {
            s.label_power.resize(k);
            for (auto& p : s.label_power) p = detail::get_le<double>(is, "record power label");
            s.oracle_rate = detail::get_le<double>(is, "record oracle rate");
        }
        ds.samples.push_back(std::move(s));
    }
    if (is.peek() != std::char_traits<char>::eof())
        throw DataError("dataset: trailing bytes after " + std::to_string(ds.header.count) +
                        " records (header field 'sample count' disagrees with file size)");
    return ds;
}

template <class Sample>
void write_dataset_file(const std::filesystem::path& path, std::span<const Sample> samples) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("dataset: cannot open '" + path.string() + "' for writing");
    write_dataset(os, samples);
    if (!os) throw DataError("dataset: write failed for '" + path.string() + "'");
}

inline Dataset read_dataset_file(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("dataset: cannot open '" + path.string() + "'");
    try {
        return read_dataset(is);
    } catch (const DataError& e) {
        throw DataError(path.string() + ": " + e.what());
    }
}

// CSV mirror of the binary records. Doubles are written with 17 significant
// digits so values round-trip.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
    const std::size_t k = ds.header.k_pairs;
    os << "sample_id,episode_id";
    for (std::size_t r = 0; r < k; ++r)
        for (std::size_t t = 0; t < k; ++t) os << ",h_" << r << '_' << t << "_re,h_" << r << '_' << t << "_im";
    if (ds.labeled()) {
        for (std::size_t i = 0; i < k; ++i) os << ",p_" << i;
        os << ",oracle_rate";
    }
    os << '\n';
    os << std::setprecision(17);
    for (const auto& s : ds.samples) {
        os << s.sample_id() << ',' << s.episode_id();
        for (const auto& c : s.channel.data()) os << ',' << c.real() << ',' << c.imag();
        if (ds.labeled()) {
            for (double p : s.label_power) os << ',' << p;
            os << ',' << s.oracle_rate;
        }
        os << '\n';
    }
}

}  // namespace clwrx
