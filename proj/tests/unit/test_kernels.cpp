#include <doctest.h>

#include <cmath>
#include <vector>

#include "ccv/kernels.hpp"
#include "ccv/rng.hpp"

using namespace ccv;

namespace {

std::vector<double> noise(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(tol).scale(1.0));
}

const std::size_t kLengths[] = {0, 1, 3, 4, 7, 8, 15, 16, 17, 33, 257};

}  // namespace

TEST_CASE("scalar table is always available and active() is one of the tables") {
  const auto& s = kernels::scalar_table();
  CHECK(s.isa == kernels::Isa::scalar);
  const auto& a = kernels::active();
  CHECK((&a == &s || &a == kernels::avx2_table()));
  CHECK(kernels::isa_name(kernels::Isa::avx2) == "avx2");
}

TEST_CASE("scalar kernels on hand-computed values") {
  const auto& k = kernels::scalar_table();
  const double x[] = {1, 2, 3};
  const double y[] = {4, -5, 6};
  CHECK(k.dot(x, y, 3) == 12.0);
  CHECK(k.sum_sq(x, 3) == 14.0);
  double acc[] = {1, 1, 1};
  k.sq_accumulate(y, acc, 3);
  CHECK(acc[1] == 26.0);
  double out[3];
  k.residual_product(x, 2.0, y, out, 3);
  CHECK(out[0] == -2.0);
  CHECK(out[1] == 14.0);
  // A = [1 2; 3 4], B = [5 6; 7 8] -> AB = [19 22; 43 50]
  const double a2[] = {1, 2, 3, 4};
  const double b2[] = {5, 6, 7, 8};
  double c2[4] = {};
  k.gemm(2, 2, 2, a2, 2, b2, 2, c2, 2);
  CHECK(c2[0] == 19.0);
  CHECK(c2[3] == 50.0);
  double ct[4] = {};
  k.gemm_tn(2, 2, 2, a2, 2, b2, 2, ct, 2);  // A^T B = [26 30; 38 44]
  CHECK(ct[0] == 26.0);
  CHECK(ct[3] == 44.0);
  double cn[4] = {};
  k.gemm_nt(2, 2, 2, a2, 2, b2, 2, cn, 2);  // A B^T = [17 23; 39 53]
  CHECK(cn[1] == 23.0);
  CHECK(cn[2] == 39.0);
}

TEST_CASE("clipped_coord_accumulate follows the sign-dependent clip rule") {
  const auto& k = kernels::scalar_table();
  const double s[] = {1, 1, 1, 1};
  const double adv[] = {1, -1, 0, 2};
  double out[4] = {};
  // ratio above 1 + eps: positive advantages clipped, negative kept
  CHECK(k.clipped_coord_accumulate(s, adv, 1.5, 0.2, 1.0, out, 4) == 3);
  CHECK(out[1] == -1.5);
  CHECK(out[0] == 0.0);
  double out2[4] = {};
  // ratio below 1 - eps: negative clipped, zero advantage counts as positive and is kept
  CHECK(k.clipped_coord_accumulate(s, adv, 0.5, 0.2, 2.0, out2, 4) == 1);
  CHECK(out2[0] == 1.0);
  CHECK(out2[3] == 2.0);
}

TEST_CASE("AVX2 kernels match the scalar reference") {
  const kernels::KernelTable* v = kernels::avx2_table();
  if (v == nullptr) {
    MESSAGE("host has no AVX2/FMA; equivalence skipped");
    return;
  }
  const auto& s = kernels::scalar_table();
  Rng rng(7, 1);
  for (std::size_t n : kLengths) {
    CAPTURE(n);
    const auto x = noise(n, rng);
    const auto y = noise(n, rng);
    CHECK(v->dot(x.data(), y.data(), n) == doctest::Approx(s.dot(x.data(), y.data(), n)).epsilon(1e-13).scale(1.0));
    CHECK(v->sum_sq(x.data(), n) == doctest::Approx(s.sum_sq(x.data(), n)).epsilon(1e-13));

    auto ya = y, yb = y;
    v->axpy(0.7, x.data(), ya.data(), n);
    s.axpy(0.7, x.data(), yb.data(), n);
    close(ya, yb, 1e-15);

    auto aa = y, ab = y;
    v->sq_accumulate(x.data(), aa.data(), n);
    s.sq_accumulate(x.data(), ab.data(), n);
    close(aa, ab, 1e-15);

    std::vector<double> ra(n), rb(n);
    v->residual_product(x.data(), 0.3, y.data(), ra.data(), n);
    s.residual_product(x.data(), 0.3, y.data(), rb.data(), n);
    close(ra, rb, 1e-15);

    for (double ratio : {0.5, 0.8, 1.0, 1.2, 1.7}) {
      std::vector<double> ca(n, 0.1), cb(n, 0.1);
      const auto na = v->clipped_coord_accumulate(x.data(), y.data(), ratio, 0.2, 0.25, ca.data(), n);
      const auto nb = s.clipped_coord_accumulate(x.data(), y.data(), ratio, 0.2, 0.25, cb.data(), n);
      CHECK(na == nb);
      close(ca, cb, 1e-15);
    }

    const auto c = noise(n, rng);
    const auto c_old = noise(n, rng);
    std::vector<double> w(n);
    for (double& e : w) e = std::abs(rng.normal());
    std::vector<double> ga(n), gb(n);
    const double la = v->baseline_residual(0.4, c.data(), c_old.data(), w.data(), 0.1, 0.3, 0.5, ga.data(), n);
    const double lb = s.baseline_residual(0.4, c.data(), c_old.data(), w.data(), 0.1, 0.3, 0.5, gb.data(), n);
    CHECK(la == doctest::Approx(lb).epsilon(1e-13).scale(1.0));
    close(ga, gb, 1e-15);

    auto pa = x, pb = x;
    auto ma = y, mb = y;
    std::vector<double> va(n), vb(n);
    for (std::size_t i = 0; i < n; ++i) va[i] = vb[i] = std::abs(c[i]);
    for (int step = 0; step < 3; ++step) {
      v->adam_update(pa.data(), ma.data(), va.data(), c_old.data(), 0.9, 0.999, 1e-3, 1e-5, n);
      s.adam_update(pb.data(), mb.data(), vb.data(), c_old.data(), 0.9, 0.999, 1e-3, 1e-5, n);
    }
    close(pa, pb, 1e-14);
    close(ma, mb, 1e-15);
    close(va, vb, 1e-15);
  }
}

TEST_CASE("AVX2 gemm variants match the scalar reference on ragged shapes") {
  const kernels::KernelTable* v = kernels::avx2_table();
  if (v == nullptr) return;
  const auto& s = kernels::scalar_table();
  Rng rng(8, 1);
  const std::size_t shapes[][3] = {{1, 1, 1}, {3, 5, 2}, {4, 4, 4}, {9, 13, 7}, {8, 64, 4}, {17, 65, 300}, {64, 5, 64}};
  for (const auto& sh : shapes) {
    const std::size_t m = sh[0], n = sh[1], k = sh[2];
    CAPTURE(m);
    CAPTURE(n);
    CAPTURE(k);
    const auto a = noise(m * k + 3, rng);
    const auto b = noise(k * n + 3, rng);
    const auto bt = noise(n * k + 3, rng);
    const auto c0 = noise(m * n, rng);
    auto c1 = c0, c2 = c0;
    v->gemm(m, n, k, a.data(), k, b.data(), n, c1.data(), n);
    s.gemm(m, n, k, a.data(), k, b.data(), n, c2.data(), n);
    close(c1, c2, 1e-12);

    const auto at = noise(k * m + 3, rng);
    c1 = c0, c2 = c0;
    v->gemm_tn(m, n, k, at.data(), m, b.data(), n, c1.data(), n);
    s.gemm_tn(m, n, k, at.data(), m, b.data(), n, c2.data(), n);
    close(c1, c2, 1e-12);

    c1 = c0, c2 = c0;
    v->gemm_nt(m, n, k, a.data(), k, bt.data(), k, c1.data(), n);
    s.gemm_nt(m, n, k, a.data(), k, bt.data(), k, c2.data(), n);
    close(c1, c2, 1e-12);
  }
}

TEST_CASE("select switches the active table") {
  const auto before = kernels::active().isa;
  CHECK(kernels::select(kernels::Isa::scalar));
  CHECK(kernels::active().isa == kernels::Isa::scalar);
  kernels::select(before);
  CHECK(kernels::active().isa == before);
}
