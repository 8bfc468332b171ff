#![allow(dead_code)]

pub const THOMPSON: &str = r#"
name = "thompson_small"
n_seeds = 6
checkpoints = [1, 2, 4, 8]
metrics = ["value_gap", "continuation_gap", "bayes_tv", "posterior_truth", "regret"]

[discount]
kind = "geometric"
gamma = 0.9

[environment]
kind = "class_member"
index = 0

[class]
kind = "example1"
k_max = 4

[agent]
kind = "thompson"
"#;

pub const POWERS_OF_TWO: &str = r#"
name = "powers_of_two"
n_seeds = 1
checkpoints = [1, 2, 3, 4, 8, 16, 64, 100, 1024]
metrics = ["regret", "exact_regret"]

[discount]
kind = "geometric"
gamma = 0.5

[environment]
kind = "bernoulli_bandit"
means = [0.0, 1.0]

[agent]
kind = "scheduled"

[agent.schedule]
kind = "powers_of_two"
on = 0
off = 1
"#;
