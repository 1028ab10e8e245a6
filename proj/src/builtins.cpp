// Named example configs. Each is plain config text so that it doubles as a
// template for hand-written runs (see `simil --example NAME --print-config`).

#include "simil/config.hpp"

namespace simil {

namespace {

// Output system dY = C X dt + D dW with D = C A^-1 B, so K* = C A^-1 = 0.5.
const char* kEx51 = R"cfg(
[run]
name = "ex51-output-system"

[system.x]
drift = "linear"
A = [[2.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
input = "partner"
drift = "linear"
A = [[1.0]]
diffusion = "constant"
B = [[0.5]]

[initial]
x0 = [1.0]
y0 = "K(x0)"

[grid]
T = 2.0
n_steps = 2000

[ensemble]
n_paths = 2000

[map]
K = {kind = "linear", matrix = [[0.5]]}

[task]
name = "estimate"
)cfg";

const char* kEx51Optimize = R"cfg(
[run]
name = "ex51-optimize"

[system.x]
drift = "linear"
A = [[2.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
input = "partner"
drift = "linear"
A = [[1.0]]
diffusion = "constant"
B = [[0.5]]

[initial]
x0 = [1.0]
y0 = [0.5]

[grid]
T = 2.0
n_steps = 2000

[ensemble]
n_paths = 2000

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "optimize"
family = "linear"
restarts = 3
)cfg";

const char* kEx51MaxPrinciple = R"cfg(
[run]
name = "ex51-maxprinciple"

[system.x]
drift = "linear"
A = [[2.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
input = "partner"
drift = "linear"
A = [[1.0]]
diffusion = "constant"
B = [[0.5]]

[initial]
x0 = [1.0]
y0 = [0.5]

[grid]
T = 2.0
n_steps = 1000

[ensemble]
n_paths = 1000

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "maxprinciple"
restarts = 3
probes = 20
)cfg";

// Equal spectra {-1, -2} (the coordinates swap roles), no noise.
const char* kEx52 = R"cfg(
[run]
name = "ex52-two-linear"

[system.x]
drift = "linear"
A = [[-1.0, 0.0], [0.0, -2.0]]
diffusion = "constant"
B = [[0.0], [0.0]]

[system.y]
drift = "linear"
A = [[-2.0, 0.0], [0.0, -1.0]]
diffusion = "constant"
B = [[0.0], [0.0]]

[initial]
x0 = [1.0, 1.0]
y0 = "K(x0)"

[grid]
T = 10.0
n_steps = 1000

[ensemble]
n_paths = 100

[map]
K = {kind = "linear", matrix = [[1.0, 0.0], [0.0, 1.0]]}

[task]
name = "spectrum"
which = "both"
lyap_horizon = 50.0
)cfg";

// lambda_X = +0.5 > 0 and lambda_Y = -0.5: the defect grows like e^{t/2}.
const char* kEx52Mismatch = R"cfg(
[run]
name = "ex52-two-linear-mismatch"

[system.x]
drift = "linear"
A = [[0.5]]
diffusion = "constant"
B = [[0.0]]

[system.y]
drift = "linear"
A = [[-0.5]]
diffusion = "constant"
B = [[0.0]]

[initial]
x0 = [1.0]
y0 = "K(x0)"

[grid]
T = 10.0
n_steps = 1000

[ensemble]
n_paths = 100

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "spectrum"
which = "both"
lyap_horizon = 50.0
)cfg";

// f0(x) = -x + 0.1 x^3 against its linearisation dY = -Y dt.
const char* kEx53 = R"cfg(
[run]
name = "ex53-hartman-grobman"

[system.x]
drift = "polynomial"
dim = 1
f1 = [[-1.0, 1], [0.1, 3]]
diffusion = "constant"
B = [[0.0]]

[system.y]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[0.0]]

[initial]
x0 = [0.3]

[grid]
T = 5.0
n_steps = 1000

[ensemble]
n_paths = 100

[task]
name = "hartman-grobman"
epsilon = 0.1
)cfg";

// dX = -X dt + dW, dY = -Y dt + 2 dW: K* = 2.
const char* kOuPair = R"cfg(
[run]
name = "ou-pair"

[system.x]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[2.0]]

[initial]
x0 = [0.0]
y0 = [0.0]

[grid]
T = 10.0
n_steps = 1000

[ensemble]
n_paths = 1000

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "optimize"
family = "linear"
restarts = 3
)cfg";

const char* kGeometric = R"cfg(
[run]
name = "geometric-spectrum"

[system.x]
drift = "linear"
A = [[-1.0]]
diffusion = "linear_state"
noise_dim = 1
S1 = [[1.0]]

[system.y]
drift = "linear"
A = [[-1.0]]
diffusion = "linear_state"
noise_dim = 1
S1 = [[1.0]]

[initial]
x0 = [1.0]
y0 = [1.0]

[grid]
T = 1.0
n_steps = 100

[ensemble]
n_paths = 100

[task]
name = "spectrum"
which = "x"
lyap_horizon = 200.0
n_seeds = 16
)cfg";

// f = g = -x with shared unit noise: K = I dissipates at alpha_1 = 2.
const char* kContracting = R"cfg(
[run]
name = "contracting-pair"

[system.x]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[1.0]]

[initial]
x0 = [1.0]
y0 = [0.0]

[grid]
T = 10.0
n_steps = 1000

[ensemble]
n_paths = 1000

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "dissipation"
)cfg";

const char* kOuSlln = R"cfg(
[run]
name = "ou-slln"

[system.x]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
drift = "linear"
A = [[-2.0]]
diffusion = "constant"
B = [[0.5]]

[initial]
x0 = [0.0]
y0 = [0.0]

[grid]
T = 50.0
n_steps = 5000

[ensemble]
n_paths = 1000

[map]
K = {kind = "linear", matrix = [[1.0]]}

[task]
name = "slln"
)cfg";

// Identical systems f(x) = x, sigma = 1: the K* ODE returns the identity.
const char* kKstarIdentity = R"cfg(
[run]
name = "kstar-identity"

[system.x]
drift = "linear"
A = [[1.0]]
diffusion = "constant"
B = [[1.0]]

[system.y]
drift = "linear"
A = [[1.0]]
diffusion = "constant"
B = [[1.0]]

[initial]
x0 = [1.0]
y0 = [1.0]

[grid]
T = 1.0
n_steps = 1000

[ensemble]
n_paths = 1000

[task]
name = "kstar-1d"
x_lo = 0.5
x_hi = 2.0
ode_steps = 1000
)cfg";

const char* kCubicProbe = R"cfg(
[run]
name = "cubic-probe"

[system.x]
drift = "polynomial"
dim = 1
f1 = [[-1.0, 1], [0.1, 3]]
diffusion = "constant"
B = [[0.5]]

[system.y]
drift = "linear"
A = [[-1.0]]
diffusion = "constant"
B = [[0.5]]

[initial]
x0 = [0.0]
y0 = [0.0]

[grid]
T = 1.0
n_steps = 100

[ensemble]
n_paths = 100

[task]
name = "probe"
radius = 1.0
)cfg";

}  // namespace

const std::vector<BuiltinExample>& builtin_examples() {
  static const std::vector<BuiltinExample> examples = {
      {"ex51-output-system", "linear system and its output system; K = C A^-1 is an exact conjugacy", kEx51},
      {"ex51-optimize", "recover K* = 0.5 for the output system by Nelder-Mead", kEx51Optimize},
      {"ex51-maxprinciple", "optimize, then check the first-order condition with LSMC adjoints", kEx51MaxPrinciple},
      {"ex52-two-linear", "two linear systems with equal spectra; asymptotic similarity holds", kEx52},
      {"ex52-two-linear-mismatch", "spectra +0.5 and -0.5; asymptotic similarity fails", kEx52Mismatch},
      {"ex53-hartman-grobman", "conjugacy of -x + 0.1 x^3 to its linearisation near 0", kEx53},
      {"ou-pair", "two OU processes with noise 1 and 2; K* = 2", kOuPair},
      {"geometric-spectrum", "geometric SDE a = -1, b = 1; exponent a - b^2/2 = -1.5", kGeometric},
      {"contracting-pair", "f = g = -x with shared noise; dissipation rate 2", kContracting},
      {"ou-slln", "running time average of a stable OU defect", kOuSlln},
      {"kstar-identity", "K* ODE for identical systems f(x) = x, sigma = 1", kKstarIdentity},
      {"cubic-probe", "empirical assumption constants of a cubic drift", kCubicProbe},
  };
  return examples;
}

RunConfig builtin_config(const std::string& name) {
  for (const BuiltinExample& e : builtin_examples())
    if (e.name == name) return parse_config(e.text);
  throw Error(ErrorCode::InvalidArgument, "unknown builtin example '" + name + "'");
}

}  // namespace simil
