#pragma once

// Raw PAMAP2 directory -> labeled windows over all 18 canonical channels.

#include <algorithm>
#include <cctype>
#include <filesystem>
#include <iterator>
#include <ostream>
#include <string>

#include "alc/pamap2.hpp"
#include "alc/preprocess.hpp"

namespace alc::prep {

/// Subject id = the digits in the file name, e.g. subject101.dat -> 101.
inline std::uint16_t subject_from_name(const std::filesystem::path& p) {
  std::string digits;
  for (char c : p.stem().string())
    if (std::isdigit(static_cast<unsigned char>(c))) digits += c;
  if (digits.empty() || digits.size() > 5 || std::stoul(digits) > 65535) {
    throw ParamError("cannot derive a subject id from file name " + p.filename().string());
  }
  return static_cast<std::uint16_t>(std::stoul(digits));
}

struct PrepareOptions {
  std::size_t window_length = 200;
  std::size_t stride = 100;
  std::size_t max_gap = 10;
};

/// Every *.dat below `raw` (recursively, in path order) is one subject.
inline Dataset prepare_directory(const std::filesystem::path& raw, const pamap2::MetTable& table,
                                 const PrepareOptions& opt = {}, std::ostream* log = nullptr) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(raw)) throw IoError("raw directory not found: " + raw.string());
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(raw))
    if (e.is_regular_file() && e.path().extension() == ".dat") files.push_back(e.path());
  if (files.empty()) throw IoError("no .dat subject files under " + raw.string());
  std::sort(files.begin(), files.end());
  Dataset ds{kAllChannels, opt.window_length, {}};
  for (const auto& f : files) {
    const auto rec = pamap2::load_subject(f, subject_from_name(f));
    const std::size_t before = ds.size();
    for (const auto& s : streams_from_records(rec, opt.max_gap)) {
      auto w = make_windows(s, table, opt.window_length, opt.stride);
      std::move(w.begin(), w.end(), std::back_inserter(ds.examples));
    }
    if (log) *log << f.filename().string() << ": " << rec.records.size() << " rows, " << ds.size() - before << " windows\n";
  }
  return ds;
}

}  // namespace alc::prep
