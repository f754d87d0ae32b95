#pragma once

#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace choke {

/// Minimal CSV emitter. Doubles are written in shortest round-trip form with a
/// '.' separator regardless of locale; non-finite values are rejected.
class CsvWriter {
 public:
  CsvWriter(std::ostream& out, std::vector<std::string> header);

  CsvWriter& field(double value);
  CsvWriter& field(long long value);
  CsvWriter& field(std::string_view value);
  void end_row();

  void row(std::initializer_list<double> values);

  std::size_t columns() const noexcept { return header_.size(); }

 private:
  void separator();

  std::ostream& out_;
  std::vector<std::string> header_;
  std::size_t in_row_ = 0;
};

/// Shortest round-trip decimal representation; throws on NaN or inf.
std::string format_double(double value);

}  // namespace choke
