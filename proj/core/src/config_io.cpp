#include "agfa/config_io.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

#include "agfa/error.hpp"

namespace agfa {

namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  size_t e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  fail(ErrorKind::kMalformedHeader, "config: '" + key + "' expects true/false, got '" + v + "'");
}

std::string canonical_name(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c)) && c != '-' && c != '_')
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  return out;
}

}  // namespace

std::string config_to_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "base_channels = " << c.base_channels << "\n";
  os << "depth = " << c.depth << "\n";
  os << "in_channels = " << c.in_channels << "\n";
  os << "out_channels = " << c.out_channels << "\n";
  os << "use_frm = " << (c.use_frm ? "true" : "false") << "\n";
  os << "frm_reduction = " << c.frm_reduction << "\n";
  os << "use_safa = " << (c.use_safa ? "true" : "false") << "\n";
  os << "safa_dilations = ";
  for (size_t i = 0; i < c.safa_dilations.size(); ++i) {
    if (i) os << ",";
    os << c.safa_dilations[i];
  }
  os << "\n";
  os << "use_safa_self_attention = " << (c.use_safa_self_attention ? "true" : "false") << "\n";
  os << "use_hfim = " << (c.use_hfim ? "true" : "false") << "\n";
  return os.str();
}

ModelConfig config_from_text(const std::string& text) {
  ModelConfig c;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    auto eq = stripped.find('=');
    if (eq == std::string::npos)
      fail(ErrorKind::kMalformedHeader, "config: expected 'key = value', got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    try {
      if (key == "base_channels")
        c.base_channels = std::stoi(value);
      else if (key == "depth")
        c.depth = std::stoi(value);
      else if (key == "in_channels")
        c.in_channels = std::stoi(value);
      else if (key == "out_channels")
        c.out_channels = std::stoi(value);
      else if (key == "use_frm")
        c.use_frm = parse_bool(value, key);
      else if (key == "frm_reduction")
        c.frm_reduction = std::stoi(value);
      else if (key == "use_safa")
        c.use_safa = parse_bool(value, key);
      else if (key == "safa_dilations") {
        c.safa_dilations.clear();
        std::istringstream vs(value);
        std::string tok;
        while (std::getline(vs, tok, ',')) c.safa_dilations.push_back(std::stoi(trim(tok)));
      } else if (key == "use_safa_self_attention")
        c.use_safa_self_attention = parse_bool(value, key);
      else if (key == "use_hfim")
        c.use_hfim = parse_bool(value, key);
      else
        fail(ErrorKind::kMalformedHeader, "config: unknown field '" + key + "'");
    } catch (const std::invalid_argument&) {
      fail(ErrorKind::kMalformedHeader, "config: cannot parse value for '" + key + "'");
    } catch (const std::out_of_range&) {
      fail(ErrorKind::kMalformedHeader, "config: value out of range for '" + key + "'");
    }
  }
  validate_config(c);
  return c;
}

void save_config(const std::string& path, const ModelConfig& config) {
  std::ofstream os(path);
  if (!os) fail(ErrorKind::kIo, "cannot open for write: " + path);
  os << config_to_text(config);
}

ModelConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::kIo, "cannot open for read: " + path);
  std::ostringstream buffer;
  buffer << is.rdbuf();
  return config_from_text(buffer.str());
}

ModelConfig resolve_config(const std::string& name_or_path) {
  const std::string canon = canonical_name(name_or_path);
  for (const auto& [name, config] : ablation_configs()) {
    if (canon == canonical_name(name)) return config;
  }
  if (canon == "agfa") return ablation_configs().back().second;
  return load_config(name_or_path);
}

}  // namespace agfa
