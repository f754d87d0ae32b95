#include "choke/csv.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <stdexcept>

namespace choke {

std::string format_double(double value) {
  if (!std::isfinite(value)) {
    throw std::domain_error("refusing to write a non-finite value to CSV");
  }
  if (value == 0.0) {
    return "0";  // also folds -0
  }
  std::array<char, 64> buf{};
  auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
  if (ec != std::errc{}) {
    throw std::runtime_error("double formatting failed");
  }
  return std::string(buf.data(), end);
}

CsvWriter::CsvWriter(std::ostream& out, std::vector<std::string> header)
    : out_(out), header_(std::move(header)) {
  for (std::size_t i = 0; i < header_.size(); ++i) {
    if (i != 0) {
      out_ << ',';
    }
    out_ << header_[i];
  }
  out_ << '\n';
}

void CsvWriter::separator() {
  if (in_row_ >= header_.size()) {
    throw std::logic_error("CSV row has more fields than the header");
  }
  if (in_row_ != 0) {
    out_ << ',';
  }
  ++in_row_;
}

CsvWriter& CsvWriter::field(double value) {
  const std::string text = format_double(value);
  separator();
  out_ << text;
  return *this;
}

CsvWriter& CsvWriter::field(long long value) {
  separator();
  out_ << value;
  return *this;
}

CsvWriter& CsvWriter::field(std::string_view value) {
  separator();
  out_ << value;
  return *this;
}

void CsvWriter::end_row() {
  if (in_row_ != header_.size()) {
    throw std::logic_error("CSV row is shorter than the header");
  }
  out_ << '\n';
  in_row_ = 0;
}

void CsvWriter::row(std::initializer_list<double> values) {
  for (double v : values) {
    field(v);
  }
  end_row();
}

}  // namespace choke
