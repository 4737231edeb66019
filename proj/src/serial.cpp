#include "invjoint/serial.hpp"

#include <bit>
#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include "invjoint/errors.hpp"

namespace invjoint::serial {

static_assert(std::endian::native == std::endian::little, "binary container assumes a little-endian host");

Writer::Writer(Mode mode, const std::string& magic) : mode_(mode) {
    out_ = magic + (mode == Mode::Binary ? " bin\n" : " txt\n");
}

void Writer::sep() {
    if (mode_ == Mode::Text && !line_start_) out_ += ' ';
    line_start_ = false;
}

void Writer::section(const std::string& name) {
    if (mode_ == Mode::Binary) {
        u64(name.size());
        out_ += name;
    } else {
        if (!line_start_) out_ += '\n';
        out_ += '[' + name + "]\n";
        line_start_ = true;
    }
}

void Writer::u64(std::uint64_t v) {
    if (mode_ == Mode::Binary) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out_.append(buf, 8);
    } else {
        sep();
        out_ += std::to_string(v);
    }
}

void Writer::f64(double v) {
    if (mode_ == Mode::Binary) {
        char buf[8];
        std::memcpy(buf, &v, 8);
        out_.append(buf, 8);
    } else {
        sep();
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out_ += buf;
    }
}

void Writer::f64s(std::span<const double> v) {
    for (double x : v) f64(x);
}

void Writer::bytes(const std::string& s) {
    u64(s.size());
    if (mode_ == Mode::Text) {
        out_ += '\n';
        line_start_ = true;
    }
    out_ += s;
    if (mode_ == Mode::Text) {
        out_ += '\n';
        line_start_ = true;
    }
}

void Writer::end_record() {
    if (mode_ == Mode::Text && !line_start_) {
        out_ += '\n';
        line_start_ = true;
    }
}

Reader::Reader(const std::string& data, const std::string& magic) : data_(data) {
    const auto nl = data_.find('\n');
    if (nl == std::string::npos) throw LoadError("missing file header");
    const std::string head = data_.substr(0, nl);
    if (head == magic + " bin") mode_ = Mode::Binary;
    else if (head == magic + " txt") mode_ = Mode::Text;
    else throw LoadError("bad magic: expected '" + magic + "' file");
    pos_ = nl + 1;
}

void Reader::truncated() const { throw LoadError("file truncated in section '" + section_ + "'"); }

void Reader::skip_space() {
    while (pos_ < data_.size() && std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
}

std::string Reader::token() {
    skip_space();
    const auto start = pos_;
    while (pos_ < data_.size() && !std::isspace(static_cast<unsigned char>(data_[pos_]))) ++pos_;
    if (start == pos_) truncated();
    return data_.substr(start, pos_ - start);
}

std::string Reader::next_section() {
    std::string name;
    if (mode_ == Mode::Binary) {
        if (pos_ + 8 > data_.size()) truncated();
        const auto len = u64();
        if (len > 64 || pos_ + len > data_.size()) truncated();
        name = data_.substr(pos_, len);
        pos_ += len;
    } else {
        skip_space();
        if (pos_ >= data_.size()) truncated();
        const auto t = token();
        if (t.size() < 2 || t.front() != '[' || t.back() != ']') throw LoadError("expected a section marker, got '" + t + "'");
        name = t.substr(1, t.size() - 2);
    }
    return name;
}

void Reader::expect_section(const std::string& name) {
    if (pos_ >= data_.size()) throw LoadError("file truncated: missing section '" + name + "'");
    const auto got = next_section();
    if (got != name) throw LoadError("expected section '" + name + "', found '" + got + "'");
    section_ = name;
}

std::uint64_t Reader::u64() {
    if (mode_ == Mode::Binary) {
        if (pos_ + 8 > data_.size()) truncated();
        std::uint64_t v;
        std::memcpy(&v, data_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    const auto t = token();
    char* end = nullptr;
    const auto v = std::strtoull(t.c_str(), &end, 10);
    if (*end != '\0') throw LoadError("malformed integer '" + t + "' in section '" + section_ + "'");
    return v;
}

double Reader::f64() {
    if (mode_ == Mode::Binary) {
        if (pos_ + 8 > data_.size()) truncated();
        double v;
        std::memcpy(&v, data_.data() + pos_, 8);
        pos_ += 8;
        return v;
    }
    const auto t = token();
    char* end = nullptr;
    const double v = std::strtod(t.c_str(), &end);
    if (*end != '\0') throw LoadError("malformed number '" + t + "' in section '" + section_ + "'");
    return v;
}

std::vector<double> Reader::f64s(std::size_t n) {
    std::vector<double> v(n);
    for (auto& x : v) x = f64();
    return v;
}

std::string Reader::bytes() {
    const auto len = u64();
    if (mode_ == Mode::Text) {
        if (pos_ >= data_.size() || data_[pos_] != '\n') truncated();
        ++pos_;
    }
    if (pos_ + len > data_.size()) truncated();
    std::string s = data_.substr(pos_, len);
    pos_ += len;
    if (mode_ == Mode::Text) {
        if (pos_ >= data_.size() || data_[pos_] != '\n') truncated();
        ++pos_;
    }
    return s;
}

bool Reader::at_end() const {
    std::size_t p = pos_;
    if (mode_ == Mode::Text)
        while (p < data_.size() && std::isspace(static_cast<unsigned char>(data_[p]))) ++p;
    return p >= data_.size();
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw LoadError("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

}  // namespace invjoint::serial
