#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pdistill/distill.hpp"
#include "pdistill/mdp.hpp"
#include "pdistill/teacher.hpp"

namespace pdistill {

using Vector = Eigen::VectorXd;
using VectorField = std::function<Vector(const Vector&)>;
using ScalarFunction = std::function<double(const Vector&)>;

// Which logits form the flat parameter vector. Logits outside the layout
// keep the values of a base table.
struct ParamLayout {
  std::vector<std::pair<ObservationKey, int>> coordinates;

  int size() const { return static_cast<int>(coordinates.size()); }
  // Every (observation, action) pair over the decision states of env.
  static ParamLayout tabular(const Environment& env);
  // (root, R) as theta_x and (branch, L) as theta_y.
  static ParamLayout counterexample();

  PolicyTable policy(const Vector& theta, const PolicyTable& base) const;
  Vector project(const UpdateAccumulator& acc) const;
};

// Undiscounted expected visit counts of decision states under a stationary
// control distribution. Throws HorizonUnbounded when episodes do not end
// with probability one.
Vector occupancy(const Environment& env,
                 const std::function<std::span<const double>(StateId)>& control);

// Expected update of one distill step, computed exactly from the dynamics.
// `baseline` only matters for the value gate.
UpdateAccumulator exact_expected_update(const MethodSpec& spec, const Environment& env,
                                        const PolicyTable& student, const ValueTable& baseline,
                                        const TeacherBundle* teacher);

// Exact update field over a parameter layout.
class ExactDynamics {
 public:
  ExactDynamics(const Environment& env, MethodSpec spec, const TeacherBundle* teacher,
                ParamLayout layout, PolicyTable base, ValueTable baseline = {});

  Vector field(const Vector& theta) const;
  VectorField as_field() const;
  PolicyTable policy(const Vector& theta) const { return layout_.policy(theta, base_); }
  const ParamLayout& layout() const { return layout_; }
  const MethodSpec& spec() const { return spec_; }

 private:
  const Environment* env_;
  MethodSpec spec_;
  const TeacherBundle* teacher_;
  ParamLayout layout_;
  PolicyTable base_;
  ValueTable baseline_;
};

// Scalars whose gradients the fields are compared against. All are
// expectations over student-driven episodes without discounting.
double expected_return(const Environment& env, const PolicyTable& student);
// E[sum_t l(s_t)] with the matching loss of spec (teacher weights included).
double expected_matching_loss(const MethodSpec& spec, const Environment& env,
                              const PolicyTable& student, const TeacherBundle& teacher);
// E[sum_t -w(s_t) log pi(a_t | s_t)].
double expected_neg_log_teacher(const Environment& env, const PolicyTable& student,
                                const TeacherBundle& teacher);

// Central-difference Jacobian of g at theta.
Eigen::MatrixXd numeric_jacobian(const VectorField& g, const Vector& theta, double h = 1e-5);
// max_ij |J_ij - J_ji|.
double jacobian_symmetry_defect(const VectorField& g, const Vector& theta, double h = 1e-5);
Vector numeric_gradient(const ScalarFunction& f, const Vector& theta, double h = 1e-5);
// max_i |g_i + dL/dtheta_i|: zero when g descends L.
double gradient_match(const VectorField& g, const ScalarFunction& loss, const Vector& theta,
                      double h = 1e-5);

// e^x + e^-x + e^y + e^-y.
double first_integral(double x, double y);
// Closed-form field of the two-parameter example (on-policy overlap cloning
// plus environment reward).
Vector counterexample_closed_form(const Vector& theta);

enum class Integrator { Euler, RK4 };

struct IntegrationPath {
  std::vector<Vector> theta;
  std::vector<double> first_integral;  // only filled for two-dimensional paths
};

IntegrationPath integrate(const VectorField& g, const Vector& theta0, double step_size,
                          long n_steps, Integrator integrator, long record_every = 1);

struct StationaryResult {
  Vector theta;
  double field_norm = 0.0;
  double time = 0.0;
  long steps = 0;
  bool converged = false;
  std::vector<double> objective;  // sampled along the path when requested
};

// Adaptive RK4 (step doubling) until |g| < tolerance or max_time.
StationaryResult integrate_until_stationary(const VectorField& g, const Vector& theta0,
                                            double tolerance = 1e-6, double max_time = 1e12,
                                            double local_error = 1e-10,
                                            const ScalarFunction& objective = nullptr);

// The two-decision tree, its teacher and its flows.
ExactDynamics counterexample_dynamics(const CounterexampleMdp& mdp, const TeacherBundle& teacher,
                                      const MethodSpec& spec);

// Three-cell corridor grid used for the gradient-field checks.
GridWorld three_state_world();
// Random full-support teacher over the decision states of env with its
// exact critic (gamma = 1).
TeacherBundle random_teacher(const Environment& env, Rng& rng);

// Gradient descent on softmax logits of q.
// TeacherGivenStudent minimises H(p || q); StudentGivenTeacher minimises H(q || p).
std::vector<double> cross_entropy_minimizer(std::span<const double> p, XentDirection direction,
                                            int iterations = 20000);

double total_variation(std::span<const double> a, std::span<const double> b);

// Presets whose exact field should (true) or should not (false) be a gradient.
const std::vector<std::pair<std::string, bool>>& gradient_field_expectations();

struct VerifyOptions {
  std::uint64_t seed = 0;
  int random_thetas = 10;
  long ode_steps = 100000;
  double ode_step_size = 1e-3;
};

// Symmetry defects, gradient matches, first-integral drift and pass flags.
nlohmann::json verify_report(const VerifyOptions& options);

}  // namespace pdistill
