#pragma once

#include <cstdio>
#include <string>
#include <vector>

namespace stein {

/// Column-labelled metric table. Numeric cells are formatted with %.17g at
/// insertion time, so serialized traces are reproducible byte for byte.
class MetricTrace {
 public:
  MetricTrace() = default;
  explicit MetricTrace(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  static std::string format(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
  }

  const std::vector<std::string>& columns() const { return columns_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }
  std::size_t row_count() const { return rows_.size(); }

  class RowBuilder {
   public:
    explicit RowBuilder(MetricTrace& t) : trace_(t) {}
    RowBuilder& num(double v) {
      cells_.push_back(format(v));
      return *this;
    }
    RowBuilder& text(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    void commit() { trace_.rows_.push_back(std::move(cells_)); }

   private:
    MetricTrace& trace_;
    std::vector<std::string> cells_;
  };

  RowBuilder row() { return RowBuilder(*this); }

  std::string to_csv() const {
    std::string out;
    for (std::size_t i = 0; i < columns_.size(); ++i) {
      if (i) out += ',';
      out += columns_[i];
    }
    out += '\n';
    for (const auto& r : rows_) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += r[i];
      }
      out += '\n';
    }
    return out;
  }

 private:
  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace stein
