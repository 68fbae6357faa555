#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "numvae/extractor.hpp"
#include "numvae/image.hpp"
#include "numvae/probes.hpp"
#include "numvae/trainer.hpp"
#include "numvae/vae.hpp"

namespace numvae {

// --------------------------------------------------------------------------
// Flat key=value configuration with defaults < file < overrides precedence
// --------------------------------------------------------------------------

// Declares the full key set up-front; anything else in a file or an
// override is rejected with the offending key (and line, for files).
// Every effective value is echoed to resolved_config.txt so a run's
// inputs are fully reconstructable from its output directory.
class ConfigResolver {
 public:
  void declare(const std::string& key, const std::string& default_value);
  bool known(const std::string& key) const;

  // missing file -> IoError; syntax/unknown key -> ConfigError "path:line".
  // Blank lines and lines starting with '#' are skipped.
  void load_file(const std::string& path);
  // items are "key=value"; malformed/unknown -> ConfigError naming the item
  void apply_overrides(const std::vector<std::string>& items);

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  int64_t get_int(const std::string& key) const;
  bool get_bool(const std::string& key) const;  // true/false/1/0

  // key=value lines in declaration order
  std::string resolved_text() const;
  // writes resolved_text() to <dir>/resolved_config.txt (atomic)
  void write_resolved(const std::string& dir) const;

 private:
  void set_checked(const std::string& key, const std::string& value,
                   const std::string& where);
  std::vector<std::pair<std::string, std::string>> entries_;  // declaration order
};

// The trainer's key set. The `preset` key (paper/desk/tiny) picks the
// defaults for every other key; file and override values then layer on
// top. `preset` itself may come from the file or an override, so the
// resolver is built in two passes.
ConfigResolver make_train_resolver(const std::string& config_path,
                                   const std::vector<std::string>& overrides);
TrainConfig train_config_from(const ConfigResolver& r);
ArchitectureConfig arch_config_from(const ConfigResolver& r);
FeatureExtractorSpec extractor_spec_from(const ConfigResolver& r);

// --------------------------------------------------------------------------
// Tabular reports
// --------------------------------------------------------------------------

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Atomic write; cells containing separators are quoted so the file
// round-trips through read_csv. Doubles should be formatted with
// format_g9 for stable 9-significant-digit output.
void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);  // FormatError on ragged rows

// Fixed-width text rendering of the same table, for human consumption.
void write_table_text(const std::string& path, const CsvTable& table);

std::string format_g9(double v);

// --------------------------------------------------------------------------
// Plots (presentational; the numbers always ship as CSV too)
// --------------------------------------------------------------------------

// Tiles decoded traversal images: one row per dimension, one column per
// delta, 2px separators. Deterministic for identical grids.
ImageU8 render_traversal_image(const TraversalGrid& grid);

// Mean +/- std per (N, area bin): one polyline per N value with error
// bars, empty bins left as gaps. Fixed styling, no text, no timestamps.
ImageU8 render_profile_image(const ResponseProfile& profile);

// Atomic small-file writer shared by the report emitters.
void write_file_atomic(const std::string& path, const std::string& contents);

}  // namespace numvae
