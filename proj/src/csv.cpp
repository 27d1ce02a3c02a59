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

#include "adaudit/csv.hpp"

#include "adaudit/util.hpp"

namespace adaudit {

bool CsvReader::read_row(std::vector<std::string>& fields) {
  fields.clear();
  int c = in_.get();
  if (c == EOF) return false;
  ++row_;

  enum class State { kStart, kUnquoted, kQuoted, kAfterQuote };
  State state = State::kStart;
  std::string field;

  auto end_field = [&] {
    fields.push_back(std::move(field));
    field.clear();
    state = State::kStart;
  };

  while (true) {
    if (c == EOF) {
      if (state == State::kQuoted) {
        throw ParseError("unterminated quoted field", row_);
      }
      end_field();
      return true;
    }
    char ch = static_cast<char>(c);
    switch (state) {
      case State::kQuoted:
        if (ch == '"') {
          if (in_.peek() == '"') {
            in_.get();
            field.push_back('"');
          } else {
            state = State::kAfterQuote;
          }
        } else {
          field.push_back(ch);
        }
        break;
      case State::kStart:
      case State::kUnquoted:
      case State::kAfterQuote:
        if (ch == ',') {
          end_field();
        } else if (ch == '\n') {
          end_field();
          return true;
        } else if (ch == '\r') {
          if (in_.peek() == '\n') in_.get();
          end_field();
          return true;
        } else if (ch == '"') {
          if (state != State::kStart) {
            throw ParseError("stray quote in field", row_);
          }
          state = State::kQuoted;
        } else {
          if (state == State::kAfterQuote) {
            throw ParseError("text after closing quote", row_);
          }
          field.push_back(ch);
          state = State::kUnquoted;
        }
        break;
    }
    c = in_.get();
  }
}

void CsvWriter::write_row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i > 0) out_.put(',');
    const std::string& f = fields[i];
    bool needs_quote = f.find_first_of(",\"\r\n") != std::string::npos;
    if (!needs_quote) {
      out_ << f;
      continue;
    }
    out_.put('"');
    for (char ch : f) {
      if (ch == '"') out_.put('"');
      out_.put(ch);
    }
    out_.put('"');
  }
  out_.put('\n');
}

}  // namespace adaudit
