// Copyright 2026 The adaudit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef ADAUDIT_CSV_HPP_
#define ADAUDIT_CSV_HPP_

#include <cstddef>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

namespace adaudit {

// RFC 4180 style reader: quoted fields may contain commas, doubled quotes,
// and newlines. Accepts both \n and \r\n terminators.
class CsvReader {
 public:
  explicit CsvReader(std::istream& in) : in_(in) {}

  // Returns false at end of input. Throws ParseError on framing errors.
  bool read_row(std::vector<std::string>& fields);

  // 1-based index of the last row returned.
  std::size_t row_number() const { return row_; }

 private:
  std::istream& in_;
  std::size_t row_ = 0;
};

class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& out) : out_(out) {}
  void write_row(const std::vector<std::string>& fields);

 private:
  std::ostream& out_;
};

}  // namespace adaudit

#endif  // ADAUDIT_CSV_HPP_
