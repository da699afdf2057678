#include "beamsight/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace beamsight::channel {

int Codebook::beam_for_angle(double angle) const {
  if (spans.empty()) return -1;
  if (angle < sector_lo || angle > sector_hi) return -1;
  for (int q = 0; q < size(); ++q) {
    const bool last = q == size() - 1;
    if (angle >= spans[q].lo && (angle < spans[q].hi || (last && angle <= spans[q].hi))) return q;
  }
  return -1;
}

CVec steering_vector(const AntennaArray& array, double azimuth) {
  if (array.m_ant < 1) throw std::invalid_argument("steering_vector: m_ant must be >= 1");
  if (std::abs(azimuth) > M_PI / 2 + 1e-12)
    throw std::invalid_argument("steering_vector: |azimuth| must be <= pi/2");
  const double amp = 1.0 / std::sqrt(static_cast<double>(array.m_ant));
  const double step = 2.0 * M_PI * array.spacing_wavelengths * std::sin(azimuth);
  CVec a(array.m_ant);
  for (int m = 0; m < array.m_ant; ++m) {
    const double phi = step * m;
    a[m] = std::complex<double>(amp * std::cos(phi), amp * std::sin(phi));
  }
  return a;
}

Codebook build_codebook(const AntennaArray& array, int q, double sector_lo, double sector_hi) {
  if (q < 1) throw std::invalid_argument("build_codebook: q must be >= 1");
  if (sector_lo > sector_hi) throw std::invalid_argument("build_codebook: empty sector");
  if (sector_lo < -M_PI / 2 - 1e-12 || sector_hi > M_PI / 2 + 1e-12)
    throw std::invalid_argument("build_codebook: sector must lie in [-pi/2, pi/2]");

  const double s_lo = std::sin(sector_lo);
  const double s_hi = std::sin(sector_hi);
  Codebook cb;
  cb.sector_lo = sector_lo;
  cb.sector_hi = sector_hi;
  cb.steer_angles.resize(q);
  for (int i = 0; i < q; ++i) {
    const double s = (q == 1) ? 0.5 * (s_lo + s_hi)
                              : s_lo + (s_hi - s_lo) * static_cast<double>(i) / (q - 1);
    cb.steer_angles[i] = std::asin(std::clamp(s, -1.0, 1.0));
  }
  cb.vectors.reserve(q);
  for (int i = 0; i < q; ++i) cb.vectors.push_back(steering_vector(array, cb.steer_angles[i]));
  cb.spans.resize(q);
  for (int i = 0; i < q; ++i) {
    cb.spans[i].lo = (i == 0) ? sector_lo : 0.5 * (cb.steer_angles[i - 1] + cb.steer_angles[i]);
    cb.spans[i].hi =
        (i == q - 1) ? sector_hi : 0.5 * (cb.steer_angles[i] + cb.steer_angles[i + 1]);
  }
  return cb;
}

ChannelState synth_channel(const PathSet& paths, const AntennaArray& array, int k_subcarriers,
                           std::uint64_t seed) {
  if (paths.paths.empty()) throw std::invalid_argument("synth_channel: empty path set");
  if (k_subcarriers < 1) throw std::invalid_argument("synth_channel: k must be >= 1");

  std::vector<CVec> responses;
  responses.reserve(paths.paths.size());
  for (const auto& p : paths.paths) responses.push_back(steering_vector(array, p.azimuth).conjugate());

  ChannelState state;
  state.per_subcarrier.resize(k_subcarriers);
  for (int k = 0; k < k_subcarriers; ++k) {
    CVec h = CVec::Zero(array.m_ant);
    for (std::size_t p = 0; p < paths.paths.size(); ++p) {
      const auto& path = paths.paths[p];
      double phi = 0.0;
      if (!path.is_los) {
        phi = paths.phase_scale * 2.0 * M_PI *
              bits_to_unit(hash_mix(seed, static_cast<std::uint64_t>(p),
                                    static_cast<std::uint64_t>(k)));
      }
      const std::complex<double> rot(std::cos(phi), std::sin(phi));
      h += path.gain * rot * responses[p];
    }
    state.per_subcarrier[k] = std::move(h);
  }
  return state;
}

std::complex<double> received_symbol(const ChannelState& h, const CVec& f,
                                     std::complex<double> x, const NoiseModel& noise, int k,
                                     Rng& rng) {
  if (k < 0 || k >= h.subcarriers())
    throw std::invalid_argument("received_symbol: subcarrier index out of range");
  // Plain transpose, not conjugate transpose.
  const std::complex<double> hf = (h.per_subcarrier[k].transpose() * f)(0, 0);
  std::complex<double> y = hf * x;
  if (noise.sigma_sq > 0) y += rng.cgaussian(noise.sigma_sq);
  return y;
}

double avg_beam_power(const ChannelState& h, const CVec& f, const NoiseModel& noise) {
  double acc = 0.0;
  for (const auto& hk : h.per_subcarrier) {
    const std::complex<double> hf = (hk.transpose() * f)(0, 0);
    acc += std::norm(hf);
  }
  acc /= static_cast<double>(h.subcarriers());
  const double snr = noise.sigma_sq > 0 ? noise.signal_power / noise.sigma_sq : 1.0;
  return acc * snr;
}

PowerProfile power_profile(const ChannelState& h, const Codebook& cb, const NoiseModel& noise) {
  PowerProfile profile;
  profile.snr_linear = noise.sigma_sq > 0 ? noise.signal_power / noise.sigma_sq : 1.0;
  profile.powers.resize(cb.size());
  for (int q = 0; q < cb.size(); ++q) profile.powers[q] = avg_beam_power(h, cb.vectors[q], noise);
  return profile;
}

std::vector<int> oracle_top_n(const PowerProfile& profile, int n) {
  const int q = profile.size();
  if (n < 1 || n > q) throw std::invalid_argument("oracle_top_n: n out of range");
  std::vector<int> idx(q);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return profile.powers[a] > profile.powers[b]; });
  idx.resize(n);
  return idx;
}

}  // namespace beamsight::channel
