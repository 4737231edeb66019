#pragma once
//
// Sectioned container used by the dataset and checkpoint files.
//
// Both modes start with a header line "<MAGIC> bin\n" or "<MAGIC> txt\n".
// Binary mode stores u64/f64 little-endian and sections as length-prefixed
// names. Text mode writes "[NAME]" lines and whitespace-separated tokens,
// doubles with 17 significant digits so that they parse back exactly.
//

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace invjoint::serial {

enum class Mode { Binary, Text };

class Writer {
public:
    Writer(Mode mode, const std::string& magic);

    void section(const std::string& name);
    void u64(std::uint64_t v);
    void f64(double v);
    void f64s(std::span<const double> v);
    void bytes(const std::string& s);
    void end_record();
    const std::string& str() const { return out_; }

private:
    void sep();
    Mode mode_;
    std::string out_;
    bool line_start_ = true;
};

class Reader {
public:
    Reader(const std::string& data, const std::string& magic);

    Mode mode() const { return mode_; }
    void expect_section(const std::string& name);
    // Reads the next section name without validating it.
    std::string next_section();
    std::uint64_t u64();
    double f64();
    std::vector<double> f64s(std::size_t n);
    std::string bytes();
    bool at_end() const;
    const std::string& current_section() const { return section_; }

private:
    [[noreturn]] void truncated() const;
    std::string token();
    void skip_space();
    const std::string& data_;
    std::size_t pos_ = 0;
    Mode mode_ = Mode::Binary;
    std::string section_ = "header";
};

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace invjoint::serial
