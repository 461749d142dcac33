#include "csa/dictionary.hpp"

#include <catch_amalgamated.hpp>

using namespace csa;
using Catch::Approx;

namespace {

// I = 3, K = 1, |Q| = 6 over length-31 preambles; D = 4 samples.
GridConfig toy_grid() {
  GridConfig g;
  g.users = 3;
  g.doppler_half_width = 1;
  g.delay_cells = 6;
  g.delay_step_samples = 1;
  g.shift_cells = 4;
  g.sample_period = 0.5;
  g.doppler_step = 2.0 * kPi / 31.0;
  return g;
}

TemplateBank toy_bank() {
  PulseShape pulse;
  return TemplateBank(make_preamble_family(3, 5, pulse), toy_grid());
}

// Template of triplet t at integer sample w (any w, zero off the support).
cplx template_at(const TemplateBank& bank, const Triplet& t, long w) {
  const GridConfig& g = bank.grid();
  const Preamble& p = bank.preamble(t.user);
  const long m = w - static_cast<long>(t.delay) * g.delay_step_samples;
  if (m < 0 || m >= p.length()) return {};
  return p.samples(m) * std::exp(kI * (t.doppler * g.doppler_step * w * g.sample_period));
}

}  // namespace

TEST_CASE("linear index is a bijection onto [0, G)") {
  const GridConfig g = toy_grid();
  CHECK(g.size() == 54);
  CHECK(linear_index({1, -1, 0}, g) == 0);
  CHECK(linear_index({3, 1, 5}, g) == 53);
  CHECK(linear_index({1, 0, 0}, g) == 6);
  for (int j = 0; j < g.size(); ++j) CHECK(linear_index(triplet_at(j, g), g) == j);
  CHECK_THROWS_AS(linear_index({4, 0, 0}, g), std::out_of_range);
  CHECK_THROWS_AS(linear_index({1, 2, 0}, g), std::out_of_range);
  CHECK_THROWS_AS(triplet_at(54, g), std::out_of_range);
}

TEST_CASE("full-scale grid has 3080 cells and covers D + spread") {
  GridConfig g;
  g.users = 10;
  g.doppler_half_width = 5;
  g.delay_cells = 28;
  g.delay_step_samples = 1;
  g.shift_cells = 20;
  g.sample_period = 0.5;
  g.doppler_step = 2.0 * kPi * 2.5e-3 / 5.0;
  CHECK(g.size() == 3080);
  CHECK(g.covers(4.0));
  CHECK_FALSE(g.covers(4.5));
}

TEST_CASE("template columns are delayed, modulated preambles") {
  const TemplateBank bank = toy_bank();
  const GridConfig& g = bank.grid();
  CHECK(bank.window_samples() == 62 + 5);
  for (int j : {0, 7, 29, 53}) {
    CVec want(bank.window_samples());
    for (int w = 0; w < want.size(); ++w) want(w) = template_at(bank, triplet_at(j, g), w);
    CHECK((bank.matrix().col(j) - want).norm() < 1e-13);
  }
}

TEST_CASE("Gram matrix equals brute-force template inner products") {
  const TemplateBank bank = toy_bank();
  const GramMatrix gram(bank);
  const CMat brute = bank.sample_period() * bank.matrix().adjoint() * bank.matrix();
  CHECK((gram.matrix() - brute).cwiseAbs().maxCoeff() < 1e-12);
  CHECK((gram.matrix() - gram.matrix().adjoint()).cwiseAbs().maxCoeff() < 1e-12);
  for (int j = 0; j < gram.size(); ++j) CHECK(gram.matrix()(j, j).real() == Approx(31.0));
  // Eigenpairs reconstruct M and come in descending order.
  const CMat rebuilt = gram.eigenvectors() * gram.eigenvalues().asDiagonal() * gram.eigenvectors().adjoint();
  CHECK((rebuilt - gram.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  for (int i = 1; i < gram.rank(); ++i) CHECK(gram.eigenvalues()(i) <= gram.eigenvalues()(i - 1));
  CHECK(gram.eigenvalues().minCoeff() > 0.0);
}

TEST_CASE("wide template banks use the small-side factorization") {
  // W < G: 3 users x 11 Doppler x 6 delays over 31 chips.
  GridConfig g = toy_grid();
  g.doppler_half_width = 5;
  g.doppler_step = 2.0 * kPi / 150.0;
  PulseShape pulse;
  pulse.oversampling = 1;
  g.sample_period = 1.0;
  const TemplateBank bank(make_preamble_family(3, 5, pulse), g);
  REQUIRE(bank.window_samples() < bank.size());
  const GramMatrix gram(bank);
  CHECK(gram.rank() <= bank.window_samples());
  const CMat rebuilt = gram.eigenvectors() * gram.eigenvalues().asDiagonal() * gram.eigenvectors().adjoint();
  CHECK((rebuilt - gram.matrix()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((gram.eigenvectors().adjoint() * gram.eigenvectors() - CMat::Identity(gram.rank(), gram.rank()))
            .cwiseAbs()
            .maxCoeff() < 1e-9);
  const GramMatrix bare(bank, false);
  CHECK(bare.matrix() == gram.matrix());
  CHECK_THROWS_AS(bare.rank(), std::logic_error);
}

TEST_CASE("ambiguity function properties") {
  const TemplateBank bank = toy_bank();
  const double ts = bank.sample_period();
  CHECK(ambiguity(bank, 2, 2, 0, 0.0).real() == Approx(31.0));
  // R^{(k)}_{a,b}(dt) = conj(R^{(-k)}_{b,a}(-dt)) e^{i k dw dt}.
  const double dw = bank.grid().doppler_step;
  for (int k = -2; k <= 2; ++k)
    for (int lag = -5; lag <= 5; ++lag) {
      const double dt = lag * ts;
      const cplx lhs = ambiguity(bank, 1, 3, k, dt);
      const cplx rhs = std::conj(ambiguity(bank, 3, 1, -k, -dt)) * std::exp(kI * (k * dw * dt));
      CHECK(std::abs(lhs - rhs) < 1e-10);
    }
  CHECK(ambiguity(bank, 1, 2, 0, 100.0 * ts) == cplx{});
  CHECK_THROWS_AS(ambiguity(bank, 1, 2, 0, 0.3 * ts), std::invalid_argument);
}

TEST_CASE("cross Gram at lag n matches explicitly shifted templates") {
  const TemplateBank bank = toy_bank();
  const GridConfig& g = bank.grid();
  const int w = bank.window_samples();
  CHECK((cross_gram(bank, 0) - GramMatrix(bank).matrix()).cwiseAbs().maxCoeff() == 0.0);
  for (int lag : {-3, -1, 1, 2}) {
    const CMat m = cross_gram(bank, lag);
    for (int col : {0, 13, 40}) {
      // M[lag](row, col) = Ts sum_w conj(phi_row[w]) phi_col[w + lag N].
      CVec seen(w);
      for (int s = 0; s < w; ++s) seen(s) = template_at(bank, triplet_at(col, g), s + lag * g.shift_samples());
      const CVec want = bank.sample_period() * (bank.matrix().adjoint() * seen);
      CHECK((m.col(col) - want).norm() < 1e-10 * std::max(1.0, want.norm()));
      CHECK((cross_gram_column(bank, lag, triplet_at(col, g)) - m.col(col)).norm() < 1e-10);
    }
  }
  CHECK(cross_gram(bank, 30).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("phase rotation is diagonal, unit modulus and identity at n = 0") {
  const GridConfig g = toy_grid();
  CHECK((phase_rotation(0, g) - CVec::Ones(g.size())).norm() == 0.0);
  const CVec d = phase_rotation(5, g);
  for (int j = 0; j < g.size(); ++j) {
    CHECK(std::abs(d(j)) == Approx(1.0));
    const Triplet t = triplet_at(j, g);
    CHECK(std::abs(d(j) - std::exp(kI * (t.doppler * g.doppler_step * 5 * g.shift_duration()))) < 1e-14);
  }
  // Kronecker structure: the phase depends on k only.
  CHECK(d(linear_index({1, 1, 0}, g)) == d(linear_index({3, 1, 5}, g)));
}

TEST_CASE("link vectors shift with the reference and drop cells leaving the grid") {
  const GridConfig g = toy_grid();
  LinkVector a(g);
  a.add(Triplet{2, 1, 1}, cplx(1.0, 2.0));
  a.add(Triplet{3, -1, 5}, cplx(-1.0, 0.0));
  CHECK(a.support_size() == 2);
  const LinkVector earlier = shift_link_vector(a, -1);
  CHECK(earlier.at({2, 1, 5}) == cplx(1.0, 2.0));
  CHECK(earlier.support_size() == 1);
  CHECK(shift_link_vector(a, 0).dense() == a.dense());
  CHECK_THROWS_AS(a.add(99, cplx(1.0, 0.0)), std::out_of_range);
}

TEST_CASE("ground truth maps on-grid paths to cells and flags collisions") {
  const GridConfig g = toy_grid();
  ChannelRealization ch;
  ch.active = {1, 2};
  ch.paths = {{1, cplx(1.0, 0.0), 2 * g.shift_duration() + 2 * g.delay_step(), g.doppler_step},
              {2, cplx(0.0, 1.0), 2 * g.shift_duration() + 3 * g.delay_step(), -g.doppler_step}};
  CHECK(reference_shift(ch, g) == 2);
  GroundTruth gt = ground_truth_link_vector(ch, g, 2);
  CHECK(gt.alpha.at({1, 1, 2}) == cplx(1.0, 0.0));
  CHECK(gt.alpha.at({2, -1, 3}) == cplx(0.0, 1.0));
  CHECK_FALSE(gt.collision);
  ch.paths.push_back({2, cplx(1.0, 0.0), ch.paths[1].delay, ch.paths[1].doppler});
  gt = ground_truth_link_vector(ch, g, 2);
  CHECK(gt.collision);
  CHECK(gt.alpha.at({2, -1, 3}) == cplx(1.0, 1.0));
}
