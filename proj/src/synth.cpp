#include "nidens/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "nidens/error.hpp"
#include "nidens/hash.hpp"
#include "nidens/rng.hpp"

namespace nidens {

const std::vector<std::pair<std::string, std::size_t>>& synth_attack_counts(SplitTag split) {
  static const std::vector<std::pair<std::string, std::size_t>> train{
      {"normal", 67343},     {"neptune", 41214},   {"satan", 3633},    {"ipsweep", 3599},
      {"portsweep", 2931},   {"smurf", 2646},      {"nmap", 1493},     {"back", 956},
      {"teardrop", 892},     {"warezclient", 890}, {"pod", 201},       {"guess_passwd", 53},
      {"buffer_overflow", 30}, {"warezmaster", 20}, {"land", 18},      {"imap", 11},
      {"rootkit", 10},       {"loadmodule", 9},    {"ftp_write", 8},   {"multihop", 7},
      {"phf", 4},            {"perl", 3},          {"spy", 2},
  };
  static const std::vector<std::pair<std::string, std::size_t>> test{
      {"normal", 9711},       {"neptune", 4657},      {"guess_passwd", 1231}, {"mscan", 996},
      {"warezmaster", 944},   {"apache2", 737},       {"satan", 735},         {"processtable", 685},
      {"smurf", 665},         {"back", 359},          {"snmpguess", 331},     {"saint", 319},
      {"mailbomb", 293},      {"snmpgetattack", 178}, {"portsweep", 157},     {"ipsweep", 141},
      {"httptunnel", 133},    {"nmap", 73},           {"pod", 41},            {"buffer_overflow", 20},
      {"multihop", 18},       {"named", 17},          {"ps", 15},             {"sendmail", 14},
      {"rootkit", 13},        {"xterm", 13},          {"teardrop", 12},       {"xlock", 9},
      {"land", 7},            {"xsnoop", 4},          {"ftp_write", 3},       {"worm", 2},
      {"loadmodule", 2},      {"perl", 2},            {"sqlattack", 2},       {"udpstorm", 2},
      {"phf", 2},             {"imap", 1},
  };
  return split == SplitTag::train ? train : test;
}

namespace {

constexpr std::array<const char*, 24> kServices{
    "http",  "smtp",   "ftp_data", "ftp",    "private", "domain_u", "telnet",  "ecr_i",
    "eco_i", "other",  "finger",   "imap4",  "pop_3",   "auth",     "urp_i",   "sunrpc",
    "ssh",   "time",   "whois",    "ldap",   "netbios_ns", "uucp",  "snmp",    "X11"};

constexpr std::array<const char*, 11> kFlags{"SF", "S0", "REJ", "RSTR", "RSTO", "SH", "S1", "S2", "RSTOS0", "S3", "OTH"};

using Row = std::array<double, 41>;

struct Categorical {
  std::string protocol, service, flag;
};

double clamp01(double x) { return std::clamp(x, 0.0, 1.0); }
double lognormal(Rng& rng, double mu, double sigma) { return std::floor(std::exp(mu + sigma * rng.normal())); }
double rate(Rng& rng, double center, double spread) { return std::round(clamp01(center + spread * rng.normal()) * 100) / 100; }
double count(Rng& rng, double center, double spread, double hi) {
  return std::clamp(std::round(center + spread * rng.normal()), 0.0, hi);
}

// Family templates. Each fills every numeric field and the categorical triple.
void normal_traffic(Rng& rng, Row& x, Categorical& c) {
  const double u = rng.uniform();
  c.protocol = u < 0.8 ? "tcp" : (u < 0.95 ? "udp" : "icmp");
  const char* services[] = {"http", "http", "http", "smtp", "ftp_data", "domain_u", "ftp", "other", "pop_3", "ssh"};
  c.service = c.protocol == "udp" ? "domain_u" : (c.protocol == "icmp" ? "eco_i" : services[rng.below(10)]);
  c.flag = rng.uniform() < 0.93 ? "SF" : kFlags[rng.below(kFlags.size())];
  x[0] = rng.uniform() < 0.9 ? 0 : lognormal(rng, 4, 2);
  x[4] = lognormal(rng, 5.5, 1.3);
  x[5] = lognormal(rng, 7.0, 2.0);
  x[9] = rng.uniform() < 0.05 ? count(rng, 1, 1, 30) : 0;
  x[11] = rng.uniform() < 0.85 ? 1 : 0;
  x[22] = count(rng, 6, 6, 511);
  x[23] = count(rng, 8, 8, 511);
  x[24] = rng.uniform() < 0.95 ? 0 : rate(rng, 0.3, 0.3);
  x[25] = x[24];
  x[26] = rng.uniform() < 0.93 ? 0 : rate(rng, 0.3, 0.3);
  x[27] = x[26];
  x[28] = rate(rng, 0.97, 0.08);
  x[29] = rate(rng, 0.03, 0.05);
  x[30] = rate(rng, 0.1, 0.15);
  x[31] = count(rng, 150, 90, 255);
  x[32] = count(rng, 190, 70, 255);
  x[33] = rate(rng, 0.8, 0.25);
  x[34] = rate(rng, 0.04, 0.06);
  x[35] = rate(rng, 0.1, 0.2);
  x[36] = rate(rng, 0.03, 0.05);
  x[37] = rate(rng, 0.01, 0.03);
  x[38] = rate(rng, 0.01, 0.02);
  x[39] = rate(rng, 0.04, 0.08);
  x[40] = rate(rng, 0.04, 0.08);
}

void dos_traffic(Rng& rng, Row& x, Categorical& c, std::uint64_t variant) {
  switch (variant % 4) {
    case 0:  // SYN flood
      c = {"tcp", kServices[4 + rng.below(6)], "S0"};
      x[22] = count(rng, 160, 80, 511);
      x[24] = rate(rng, 0.98, 0.04);
      x[25] = x[24];
      x[28] = rate(rng, 0.06, 0.05);
      x[29] = rate(rng, 0.07, 0.04);
      x[37] = rate(rng, 0.98, 0.05);
      x[38] = x[37];
      break;
    case 1:  // ICMP echo storm
      c = {"icmp", "ecr_i", "SF"};
      x[4] = rng.uniform() < 0.6 ? 1032 : 520;
      x[22] = count(rng, 480, 40, 511);
      x[23] = x[22];
      x[28] = 1;
      break;
    case 2:  // malformed fragments
      c = {"udp", "private", "SF"};
      x[4] = 28;
      x[7] = 3;
      x[22] = count(rng, 60, 40, 511);
      break;
    default:  // oversized application requests
      c = {"tcp", "http", rng.uniform() < 0.8 ? "SF" : "RSTR"};
      x[4] = 54540;
      x[5] = lognormal(rng, 8.9, 0.3);
      x[9] = 2;
      x[11] = 1;
      x[22] = count(rng, 5, 4, 511);
      x[28] = 1;
  }
  x[31] = 255;
  x[32] = count(rng, 20, 20, 255);
  x[33] = rate(rng, 0.08, 0.1);
  x[34] = rate(rng, 0.06, 0.05);
}

void probe_traffic(Rng& rng, Row& x, Categorical& c, std::uint64_t variant) {
  const double u = rng.uniform();
  c.protocol = variant % 2 == 0 ? (u < 0.7 ? "tcp" : "icmp") : (u < 0.5 ? "icmp" : "udp");
  c.service = c.protocol == "icmp" ? (rng.uniform() < 0.6 ? "eco_i" : "urp_i") : kServices[rng.below(kServices.size())];
  c.flag = rng.uniform() < 0.55 ? "REJ" : (rng.uniform() < 0.5 ? "RSTO" : "SF");
  x[4] = rng.uniform() < 0.7 ? 0 : count(rng, 8, 10, 100);
  x[22] = count(rng, 3, 3, 511);
  x[23] = count(rng, 1, 1, 511);
  x[26] = rate(rng, 0.6, 0.35);
  x[27] = x[26];
  x[28] = rate(rng, 0.3, 0.3);
  x[29] = rate(rng, 0.6, 0.3);
  x[31] = count(rng, 200, 80, 255);
  x[32] = count(rng, 3, 5, 255);
  x[33] = rate(rng, 0.02, 0.05);
  x[34] = rate(rng, 0.6, 0.3);
  x[35] = rate(rng, 0.7, 0.3);
  x[36] = rate(rng, 0.1, 0.2);
  x[39] = rate(rng, 0.6, 0.35);
  x[40] = rate(rng, 0.6, 0.35);
}

void r2l_traffic(Rng& rng, Row& x, Categorical& c, std::uint64_t variant) {
  const char* services[] = {"ftp", "ftp_data", "telnet", "imap4", "smtp", "http", "snmp", "pop_3"};
  c = {variant % 5 == 4 ? "udp" : "tcp", services[variant % 8], "SF"};
  if (c.protocol == "udp") c.service = "snmp";
  x[0] = lognormal(rng, 2, 2.5);
  x[4] = lognormal(rng, 5 + static_cast<double>(variant % 3), 2);
  x[5] = lognormal(rng, 5, 3);
  x[9] = count(rng, 2, 3, 30);
  x[10] = variant % 3 == 0 ? count(rng, 1, 1, 5) : 0;
  x[11] = rng.uniform() < 0.6 ? 1 : 0;
  x[21] = variant % 2 == 0 && rng.uniform() < 0.5 ? 1 : 0;
  x[22] = count(rng, 2, 2, 511);
  x[23] = count(rng, 2, 2, 511);
  x[28] = rate(rng, 0.95, 0.1);
  x[31] = count(rng, 60, 60, 255);
  x[32] = count(rng, 30, 40, 255);
  x[33] = rate(rng, 0.5, 0.35);
  x[35] = rate(rng, 0.4, 0.4);
  x[36] = rate(rng, 0.05, 0.1);
}

void u2r_traffic(Rng& rng, Row& x, Categorical& c, std::uint64_t variant) {
  c = {"tcp", variant % 2 == 0 ? "telnet" : "ftp_data", "SF"};
  x[0] = lognormal(rng, 5, 2);
  x[4] = lognormal(rng, 6, 2);
  x[5] = lognormal(rng, 7, 2);
  x[9] = count(rng, 3, 3, 30);
  x[11] = 1;
  x[12] = count(rng, 1, 2, 20);
  x[13] = rng.uniform() < 0.6 ? 1 : 0;
  x[15] = count(rng, 1, 2, 20);
  x[16] = count(rng, 2, 2, 20);
  x[17] = rng.uniform() < 0.3 ? 1 : 0;
  x[22] = 1;
  x[23] = 1;
  x[28] = 1;
  x[31] = count(rng, 20, 30, 255);
  x[32] = count(rng, 10, 20, 255);
  x[33] = rate(rng, 0.5, 0.4);
}

std::string format_value(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

// Attack names that never appear in training look more like normal traffic.
bool train_has(std::string_view name) {
  for (const auto& [n, _] : synth_attack_counts(SplitTag::train)) {
    if (n == name) return true;
  }
  return false;
}

}  // namespace

std::string synth_nslkdd(SplitTag split, const SynthOptions& opts) {
  if (!(opts.scale > 0.0)) throw Error("synthetic scale must be positive");
  const AttackMap map = AttackMap::builtin();
  struct Pending {
    std::string name;
    std::size_t index;
  };
  std::vector<Pending> rows;
  for (const auto& [name, n] : synth_attack_counts(split)) {
    const auto scaled = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(opts.scale * static_cast<double>(n))));
    for (std::size_t i = 0; i < scaled; ++i) rows.push_back({name, i});
  }
  const std::uint64_t split_seed = derive_seed(opts.seed, split == SplitTag::train ? "synth-train" : "synth-test");
  Rng order(derive_seed(split_seed, "order"));
  order.shuffle(rows);

  std::string out;
  out.reserve(rows.size() * 160);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto& name = rows[r].name;
    Rng rng(derive_seed(split_seed, r));
    const std::uint64_t variant = fnv1a64(name);
    const AttackClass cls = map.lookup(name);
    Row attack{};
    Categorical ac;
    Row normal{};
    Categorical nc;
    normal_traffic(rng, normal, nc);
    switch (cls) {
      case AttackClass::normal: attack = normal, ac = nc; break;
      case AttackClass::dos: dos_traffic(rng, attack, ac, variant); break;
      case AttackClass::probe: probe_traffic(rng, attack, ac, variant); break;
      case AttackClass::r2l: r2l_traffic(rng, attack, ac, variant); break;
      case AttackClass::u2r: u2r_traffic(rng, attack, ac, variant); break;
    }
    // Each numeric field of an attack row is borrowed from normal traffic
    // with probability `blend`.
    double blend = 0.0;
    if (cls != AttackClass::normal) {
      blend = train_has(name) ? 0.12 : 0.55;
      if (cls == AttackClass::r2l || cls == AttackClass::u2r) blend += 0.2;
      if (split == SplitTag::test) blend += 0.1;
    }
    Row x = attack;
    for (std::size_t f = 0; f < 41; ++f) {
      if (rng.uniform() < blend) x[f] = normal[f];
    }
    if (rng.uniform() < blend) ac.service = nc.service;
    if (rng.uniform() < blend) ac.flag = nc.flag;
    if (split == SplitTag::test && name == "normal" && rng.uniform() < 0.002) ac.service = "aol";
    if (name == "land") x[6] = 1;

    std::vector<std::string> fields(41);
    for (std::size_t f = 0; f < 41; ++f) fields[f] = format_value(x[f]);
    fields[1] = ac.protocol;
    fields[2] = ac.service;
    fields[3] = ac.flag;
    for (const auto& f : fields) {
      out += f;
      out += ',';
    }
    out += name;
    out += ',';
    out += std::to_string(1 + rng.below(21));
    out += '\n';
  }
  return out;
}

SynthFiles write_synth_nslkdd(const std::filesystem::path& dir, const SynthOptions& opts) {
  SynthFiles files{dir / "KDDTrain+.txt", dir / "KDDTest+.txt"};
  write_file(files.train, synth_nslkdd(SplitTag::train, opts));
  write_file(files.test, synth_nslkdd(SplitTag::test, opts));
  return files;
}

}  // namespace nidens
