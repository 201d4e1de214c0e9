#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "afr/dataset.hpp"
#include "afr/error.hpp"

namespace afr {

// ---------------------------------------------------------------------------
// Little-endian byte stream helpers. Values are packed byte by byte so the
// on-disk layout does not depend on host endianness.
// ---------------------------------------------------------------------------

namespace io {

class Writer {
public:
    explicit Writer(const std::string& path) : out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) throw InvalidInput("cannot open file for writing: " + path);
    }

    void bytes(const void* data, std::size_t len) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(len));
    }
    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) {
        std::uint8_t b[4];
        for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 4);
    }
    void u64(std::uint64_t v) {
        std::uint8_t b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
        bytes(b, 8);
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void close(const std::string& path) {
        out_.flush();
        if (!out_) throw InvalidInput("write failed: " + path);
        out_.close();
    }

private:
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw InvalidInput("cannot open file for reading: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        buf_ = ss.str();
    }

    std::uint64_t offset() const { return pos_; }
    std::uint64_t remaining() const { return buf_.size() - pos_; }

    void need(std::uint64_t len, const char* what) {
        if (remaining() < len)
            throw ParseError(std::string("truncated payload while reading ") + what, pos_);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf_[pos_++]);
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64(const char* what) {
        need(8, what);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[pos_ + i])) << (8 * i);
        pos_ += 8;
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

    void expect_magic(const char magic[4]) {
        need(4, "magic bytes");
        if (std::memcmp(buf_.data() + pos_, magic, 4) != 0)
            throw ParseError("bad magic bytes, expected \"" + std::string(magic, 4) + "\"", pos_);
        pos_ += 4;
    }
    void expect_end() {
        if (remaining() != 0)
            throw ParseError("trailing bytes after payload", pos_);
    }

private:
    std::string buf_;
    std::uint64_t pos_ = 0;
};

}  // namespace io

// ---------------------------------------------------------------------------
// Binary embedding container:
//   magic "AFRE" | version u32 | N u64 | D u64 | C u32 | G u32 | flags u8
//   (bit0 = has groups, bit1 = has split tags) | features N*D f64 row-major
//   | labels N u32 | [groups N u32] | [split tags N u8]
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

inline void write_embedding_file(const EmbeddingDataset& dataset, const std::string& path) {
    dataset.validate();
    io::Writer w(path);
    w.bytes("AFRE", 4);
    w.u32(kEmbeddingFormatVersion);
    w.u64(dataset.n());
    w.u64(dataset.dim());
    w.u32(dataset.num_classes);
    w.u32(dataset.num_groups);
    std::uint8_t flags = 0x02;  // split tags always written
    if (dataset.groups) flags |= 0x01;
    w.u8(flags);
    for (double v : dataset.features.data()) w.f64(v);
    for (std::uint32_t y : dataset.labels) w.u32(y);
    if (dataset.groups)
        for (std::uint32_t g : *dataset.groups) w.u32(g);
    for (Split s : dataset.split_tags) w.u8(static_cast<std::uint8_t>(s));
    w.close(path);
}

inline EmbeddingDataset read_embedding_file(const std::string& path) {
    io::Reader r(path);
    r.expect_magic("AFRE");
    std::uint64_t version_at = r.offset();
    std::uint32_t version = r.u32("format version");
    if (version != kEmbeddingFormatVersion)
        throw ParseError("unsupported format version " + std::to_string(version), version_at);

    std::uint64_t n = r.u64("row count");
    std::uint64_t d = r.u64("feature dimension");
    std::uint64_t classes_at = r.offset();
    std::uint32_t num_classes = r.u32("class count");
    std::uint32_t num_groups = r.u32("group count");
    std::uint64_t flags_at = r.offset();
    std::uint8_t flags = r.u8("flags");
    bool has_groups = flags & 0x01;
    bool has_tags = flags & 0x02;
    if (flags & ~0x03u) throw ParseError("unknown flag bits set", flags_at);
    if (has_groups != (num_groups > 0))
        throw ParseError("group flag inconsistent with group count", flags_at);
    if (num_classes == 0) throw ParseError("class count must be positive", classes_at);

    // bound the payload before allocating anything, so a corrupt header
    // cannot trigger a huge allocation
    if (n != 0 && d != 0 && (r.remaining() / 8) / n < d)
        throw ParseError("truncated payload while reading feature matrix", r.offset());
    if (n != 0 && r.remaining() / n < 4)
        throw ParseError("truncated payload while reading labels", r.offset());

    EmbeddingDataset ds;
    ds.num_classes = num_classes;
    ds.num_groups = num_groups;
    ds.features = Matrix(n, d);
    for (std::uint64_t i = 0; i < n * d; ++i) {
        std::uint64_t at = r.offset();
        double v = r.f64("feature matrix");
        if (!std::isfinite(v)) throw ParseError("non-finite feature value", at);
        ds.features.data()[i] = v;
    }
    ds.labels.resize(n);
    for (std::uint64_t i = 0; i < n; ++i) {
        std::uint64_t at = r.offset();
        std::uint32_t y = r.u32("labels");
        if (y >= num_classes) throw ParseError("class index out of range", at);
        ds.labels[i] = y;
    }
    if (has_groups) {
        ds.groups.emplace(n);
        for (std::uint64_t i = 0; i < n; ++i) {
            std::uint64_t at = r.offset();
            std::uint32_t g = r.u32("groups");
            if (g >= num_groups) throw ParseError("group index out of range", at);
            (*ds.groups)[i] = g;
        }
    }
    ds.split_tags.assign(n, Split::Erm);
    if (has_tags) {
        for (std::uint64_t i = 0; i < n; ++i) {
            std::uint64_t at = r.offset();
            std::uint8_t t = r.u8("split tags");
            if (t > 3) throw ParseError("split tag out of range", at);
            ds.split_tags[i] = static_cast<Split>(t);
        }
    }
    r.expect_end();
    return ds;
}

// ---------------------------------------------------------------------------
// CSV: header "f0,..,f{D-1},label[,group][,split]"; doubles printed with 17
// significant digits so values survive a round trip. ParseError offsets are
// 1-based line numbers for this format.
// ---------------------------------------------------------------------------

inline void write_embedding_csv(const EmbeddingDataset& dataset, const std::string& path) {
    dataset.validate();
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot open file for writing: " + path);
    for (std::size_t d = 0; d < dataset.dim(); ++d) out << "f" << d << ",";
    out << "label";
    if (dataset.groups) out << ",group";
    out << ",split\n";
    char buf[40];
    for (std::size_t i = 0; i < dataset.n(); ++i) {
        auto row = dataset.features.row(i);
        for (double v : row) {
            std::snprintf(buf, sizeof(buf), "%.17g", v);
            out << buf << ",";
        }
        out << dataset.labels[i];
        if (dataset.groups) out << "," << (*dataset.groups)[i];
        out << "," << split_name(dataset.split_tags[i]) << "\n";
    }
    if (!out) throw InvalidInput("write failed: " + path);
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = line.find(',', start);
        if (comma == std::string::npos) {
            fields.push_back(line.substr(start));
            return fields;
        }
        fields.push_back(line.substr(start, comma - start));
        start = comma + 1;
    }
}

inline double parse_double(const std::string& s, std::uint64_t line_no) {
    try {
        std::size_t used = 0;
        double v = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError("cannot parse number \"" + s + "\"", line_no);
    }
}

inline std::uint32_t parse_u32(const std::string& s, std::uint64_t line_no) {
    try {
        std::size_t used = 0;
        unsigned long v = std::stoul(s, &used);
        if (used != s.size() || v > 0xffffffffUL) throw std::invalid_argument(s);
        return static_cast<std::uint32_t>(v);
    } catch (const std::exception&) {
        throw ParseError("cannot parse index \"" + s + "\"", line_no);
    }
}

}  // namespace detail

inline EmbeddingDataset read_embedding_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open file for reading: " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError("missing header row", 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    auto header = detail::split_csv_line(line);
    std::size_t dims = 0;
    while (dims < header.size() && header[dims] == "f" + std::to_string(dims)) ++dims;
    if (dims == 0) throw ParseError("header must start with feature columns f0..", 1);
    std::size_t col = dims;
    if (col >= header.size() || header[col] != "label")
        throw ParseError("header missing \"label\" column after features", 1);
    ++col;
    bool has_group = col < header.size() && header[col] == "group";
    if (has_group) ++col;
    bool has_split = col < header.size() && header[col] == "split";
    if (has_split) ++col;
    if (col != header.size())
        throw ParseError("unexpected header column \"" + header[col] + "\"", 1);

    EmbeddingDataset ds;
    std::vector<double> values;
    std::uint64_t line_no = 1;
    std::uint32_t max_label = 0, max_group = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto fields = detail::split_csv_line(line);
        if (fields.size() != header.size())
            throw ParseError("expected " + std::to_string(header.size()) + " fields, got " +
                                 std::to_string(fields.size()),
                             line_no);
        for (std::size_t d = 0; d < dims; ++d)
            values.push_back(detail::parse_double(fields[d], line_no));
        std::uint32_t y = detail::parse_u32(fields[dims], line_no);
        ds.labels.push_back(y);
        max_label = std::max(max_label, y);
        if (has_group) {
            if (!ds.groups) ds.groups.emplace();
            std::uint32_t g = detail::parse_u32(fields[dims + 1], line_no);
            ds.groups->push_back(g);
            max_group = std::max(max_group, g);
        }
        if (has_split) {
            const std::string& tag = fields[dims + (has_group ? 2 : 1)];
            if (tag == "ERM") ds.split_tags.push_back(Split::Erm);
            else if (tag == "RW") ds.split_tags.push_back(Split::Rw);
            else if (tag == "VAL") ds.split_tags.push_back(Split::Val);
            else if (tag == "TEST") ds.split_tags.push_back(Split::Test);
            else throw ParseError("unknown split tag \"" + tag + "\"", line_no);
        } else {
            ds.split_tags.push_back(Split::Erm);
        }
    }
    if (ds.labels.empty()) throw ParseError("no data rows", line_no);
    ds.features = Matrix(ds.labels.size(), dims, std::move(values));
    ds.num_classes = max_label + 1;
    ds.num_groups = ds.groups ? max_group + 1 : 0;
    ds.validate();
    return ds;
}

}  // namespace afr
