// Generate a small synthetic sequence, decompose it and score the detections.

#include <cstdio>

#include "elsd/elsd.hpp"

int main() {
  elsd::SynthScenario scn;
  scn.height = 24;
  scn.width = 24;
  scn.n_frames = 30;
  scn.seed = 7;
  const elsd::SynthOutput data = elsd::generate(scn);

  const elsd::GroupSet groups = elsd::build_grid_groups(scn.height, scn.width);
  elsd::SolverConfig cfg; // lambda1 = 1/sqrt(p), lambda2 = lambda1/5
  const elsd::DecompositionResult res = elsd::solve(data.D, groups, cfg);
  std::printf("iterations %d, converged %d, rank(B) %ld\n", res.iterations, res.converged ? 1 : 0,
              static_cast<long>(res.rank_B));

  const elsd::DetectionSet dets = elsd::detect(res.S, {scn.height, scn.width});
  const elsd::MetricsReport m = elsd::match_and_score(dets, data.gt, 0.3);
  std::printf("recall %.3f precision %.3f F1 %.3f\n", m.recall, m.precision, m.f1);
  return 0;
}
