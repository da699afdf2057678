#pragma once

#include <Eigen/Dense>
#include <complex>
#include <cstdint>
#include <vector>

#include "beamsight/rng.hpp"

namespace beamsight::channel {

using CVec = Eigen::VectorXcd;

struct AntennaArray {
  int m_ant = 64;
  double spacing_wavelengths = 0.5;
};

// Half-open angular interval [lo, hi); the last codebook span is treated as
// closed at the sector edge.
struct AngleSpan {
  double lo = 0;
  double hi = 0;
};

struct Codebook {
  std::vector<CVec> vectors;
  std::vector<double> steer_angles;
  std::vector<AngleSpan> spans;
  double sector_lo = 0;
  double sector_hi = 0;

  int size() const { return static_cast<int>(vectors.size()); }
  // Index of the span containing `angle`, -1 outside the sector.
  int beam_for_angle(double angle) const;
};

struct ChannelState {
  std::vector<CVec> per_subcarrier;  // h_k, k = 0..K-1
  int subcarriers() const { return static_cast<int>(per_subcarrier.size()); }
};

struct Path {
  double azimuth = 0;
  std::complex<double> gain{1.0, 0.0};
  bool is_los = false;
};

struct PathSet {
  std::vector<Path> paths;
  // Scales the hashed per-subcarrier phases of non-LOS paths; 0 freezes
  // them at zero, 1 is the default decorrelated behaviour.
  double phase_scale = 1.0;
};

struct NoiseModel {
  double sigma_sq = 0.0;
  double signal_power = 1.0;
};

struct PowerProfile {
  std::vector<double> powers;
  double snr_linear = 1.0;
  int size() const { return static_cast<int>(powers.size()); }
};

// ULA response: element m gets phase 2*pi*spacing*m*sin(azimuth), 1/sqrt(M)
// amplitude. |azimuth| <= pi/2.
CVec steering_vector(const AntennaArray& array, double azimuth);

// Q steering vectors whose sines are uniform over the sector's sine range;
// spans split the sector at midpoints between adjacent steer angles.
Codebook build_codebook(const AntennaArray& array, int q, double sector_lo, double sector_hi);

// h_k = sum_p gain_p * exp(i*phi_{p,k}) * conj(a(azimuth_p)); phi is zero for
// the LOS path and hash-derived from (seed, path, k) otherwise.
ChannelState synth_channel(const PathSet& paths, const AntennaArray& array, int k_subcarriers,
                           std::uint64_t seed);

// y = h_k^T f x + v with v ~ CN(0, sigma_sq). k is 0-based here.
std::complex<double> received_symbol(const ChannelState& h, const CVec& f,
                                     std::complex<double> x, const NoiseModel& noise, int k,
                                     Rng& rng);

// (1/K) sum_k |h_k^T f|^2 scaled by signal_power/sigma_sq; the scale factor
// is 1 when sigma_sq == 0 (raw power reporting).
double avg_beam_power(const ChannelState& h, const CVec& f, const NoiseModel& noise);

PowerProfile power_profile(const ChannelState& h, const Codebook& cb, const NoiseModel& noise);

// Indices of the n largest powers, descending, ties broken by lower index.
std::vector<int> oracle_top_n(const PowerProfile& profile, int n);

}  // namespace beamsight::channel
