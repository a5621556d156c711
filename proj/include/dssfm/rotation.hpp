#pragma once
// Expansion-parameter matrices A_t and the rotation back to the reduced
// parameterisation, B_t = B*_t A_tL.

#include "dssfm/types.hpp"

#include <Eigen/Cholesky>
#include <string>

namespace dssfm {

struct RotationSet {
  MatrixPath a_mats;  // t = 0..T, a_mats[0] = I
  MatrixPath chol;    // lower Cholesky factors
};

inline constexpr double kRotationRidge = 1e-8;

// A_t = M1 - M12 - M12' + M2 (or M2 - phi M12' - phi M12 + phi^2 M1 when
// phi_aware), symmetrised, with a ridge added before the Cholesky factor.
// Only the leading `k` components of the moments are used.
inline RotationSet update_rotation(const SmoothedMoments& m, std::size_t k, bool phi_aware = false,
                                   double phi = 1.0) {
  const std::size_t t_len = m.n_times();
  const auto kk = static_cast<Eigen::Index>(k);
  if (k > m.dim()) throw DimensionError("update_rotation: k exceeds moment dimension");
  RotationSet rs;
  rs.a_mats.resize(t_len + 1);
  rs.chol.resize(t_len + 1);
  rs.a_mats[0] = Matrix::Identity(kk, kk);
  rs.chol[0] = Matrix::Identity(kk, kk);
  const double c = phi_aware ? phi : 1.0;
  for (std::size_t t = 1; t <= t_len; ++t) {
    const Vector prev = m.means[t - 1].head(kk);
    const Vector cur = m.means[t].head(kk);
    const Matrix m1 = prev * prev.transpose() + m.covs[t - 1].topLeftCorner(kk, kk);
    const Matrix m12 = prev * cur.transpose() + m.lag_covs[t - 1].topLeftCorner(kk, kk);
    const Matrix m2 = cur * cur.transpose() + m.covs[t].topLeftCorner(kk, kk);
    Matrix a = c * c * m1 - c * m12 - c * m12.transpose() + m2;
    a = 0.5 * (a + a.transpose()).eval();
    rs.a_mats[t] = a;
    Eigen::LLT<Matrix> llt(a + kRotationRidge * Matrix::Identity(kk, kk));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("update_rotation: Cholesky failed at t=" + std::to_string(t));
    }
    rs.chol[t] = llt.matrixL();
  }
  return rs;
}

inline RotationSet update_rotation(const SmoothedMoments& m, const ModelConfig& cfg) {
  return update_rotation(m, m.dim(), cfg.rotation_phi_aware, cfg.phi_tilde);
}

// Divides every A_t (t >= 1) by `scale` and refactors; used to express the
// expansion relative to a reduced model whose innovation variance is `scale`.
inline RotationSet rescale_rotation(const RotationSet& rs, double scale) {
  RotationSet out = rs;
  for (std::size_t t = 1; t < out.a_mats.size(); ++t) {
    out.a_mats[t] /= scale;
    const auto k = out.a_mats[t].rows();
    Eigen::LLT<Matrix> llt(out.a_mats[t] + kRotationRidge * Matrix::Identity(k, k));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("rescale_rotation: Cholesky failed at t=" + std::to_string(t));
    }
    out.chol[t] = llt.matrixL();
  }
  return out;
}

// Rescales every A_t (t >= 1) to unit diagonal, D^{-1/2} A_t D^{-1/2}, and
// refactors. The rotation then decorrelates the factors without changing
// their scale.
inline RotationSet unit_diagonal_rotation(const RotationSet& rs) {
  RotationSet out = rs;
  for (std::size_t t = 1; t < out.a_mats.size(); ++t) {
    Matrix& a = out.a_mats[t];
    const auto k = a.rows();
    const Vector d = a.diagonal().cwiseMax(kRotationRidge).cwiseSqrt().cwiseInverse();
    a = d.asDiagonal() * a * d.asDiagonal();
    Eigen::LLT<Matrix> llt(a + kRotationRidge * Matrix::Identity(k, k));
    if (llt.info() != Eigen::Success) {
      throw NumericalError("unit_diagonal_rotation: Cholesky failed at t=" + std::to_string(t));
    }
    out.chol[t] = llt.matrixL();
  }
  return out;
}

// B_t = B*_t A_tL on the leading factor columns; any trailing columns (the
// intercept) pass through unchanged.
inline LoadingsPath rotate_loadings(const LoadingsPath& star, const RotationSet& rot) {
  if (rot.chol.size() != star.betas.size()) throw DimensionError("rotate_loadings: length mismatch");
  LoadingsPath out = star;
  for (std::size_t t = 0; t < star.betas.size(); ++t) {
    const auto k = rot.chol[t].rows();
    if (k > star.betas[t].cols()) throw DimensionError("rotate_loadings: rotation wider than loadings");
    out.betas[t].leftCols(k) = star.betas[t].leftCols(k) * rot.chol[t];
  }
  return out;
}

}  // namespace dssfm
