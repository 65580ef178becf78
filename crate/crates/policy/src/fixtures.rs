//! Reference policy sources in the sandbox dialect.

/// Seed priority: negative CPU slack.
pub const SEED_PRIORITY: &str = r#"fn priority_v0(bin, item) {
    // Calculate and return the priority score for adding a specific item to a bin based on available CPU and MEM resources.
    // bin: the bin's available resources, bin[0] is CPU and bin[1] is memory.
    // item: the item's resource requirements, item[0] is CPU and item[1] is memory.
    // Returns the score for placing the item in the current bin; higher is a better fit.
    let score = -(bin[0] - item[0]);
    return score;
}
"#;

/// Seed selector: always the first option.
pub const SEED_SELECTOR: &str = r#"fn heuristic_selector_v0(condition) {
    // condition: array of maps, each the distribution of request types over the past 200 requests,
    // divided into 4 groups of 50 requests each. Keys: "small", "medium_small", "medium_medium",
    // "medium_large", "large". Returns the index of the selected heuristic (only 1,2,3,4).
    return 1;
}
"#;

/// Miner output: multi-stage weighted residual score. Steps the original
/// listing elides are filled with simple, documented choices.
pub const MINER_PRIORITY: &str = r#"fn score_by_weight(min_weighted_diff, weight) {
    min_weighted_diff * weight
}

fn priority(bin, item) {
    // Unpack CPU and memory resources
    let cpu_resource = bin[0];
    let mem_resource = bin[1];
    let cpu_needed = item[0];
    let mem_needed = item[1];

    // Return -inf if item doesn't fit
    if cpu_needed > cpu_resource || mem_needed > mem_resource {
        return neg_inf();
    }

    // Differences, ratios and a weight factor
    let cpu_diff = cpu_resource - cpu_needed;
    let mem_diff = mem_resource - mem_needed;
    let cpu_ratio = if cpu_resource > 0.0 { cpu_needed / cpu_resource } else { 1.0 };
    let mem_ratio = if mem_resource > 0.0 { mem_needed / mem_resource } else { 1.0 };
    let weight_factor = 1.0 + abs(cpu_ratio - mem_ratio);
    let resource_diffs = [cpu_diff, mem_diff];
    let ratios = [cpu_ratio, mem_ratio];

    // Core min_weighted_diff
    let min_weighted_diff = inf();
    for i in 0..2 {
        let weighted_diff = -((resource_diffs[0] + resource_diffs[1]) * (1.0 + ratios[i]) * weight_factor);
        if ratios[i] > 0.9 {
            weighted_diff *= 0.8;
        }
        min_weighted_diff = min(min_weighted_diff, weighted_diff);
    }

    // Remaining space and item/bin size ratio
    let volume = cpu_resource * mem_resource;
    let remaining_space = if volume > 0.0 { (cpu_diff * mem_diff) / volume } else { 0.0 };
    min_weighted_diff *= (1.0 - remaining_space);
    let size_ratio = if volume > 0.0 { (cpu_needed * mem_needed) / volume } else { 1.0 };

    // Weights by size_ratio
    let weighted_items = if size_ratio <= 0.5 { [0.7, 0.3] } else { [0.6, 0.4] };
    let best_weight = weighted_items[0];
    for w in weighted_items {
        if score_by_weight(min_weighted_diff, w) > score_by_weight(min_weighted_diff, best_weight) {
            best_weight = w;
        }
    }
    let final_score = score_by_weight(min_weighted_diff, best_weight);

    // Adjustments, penalties and bonuses
    final_score += abs(size_ratio - 1.0) * 0.2;
    if cpu_diff < 0.1 * cpu_resource && mem_diff > 0.5 * mem_resource {
        final_score *= 1.2;
    }
    if cpu_diff == 0.0 && mem_diff == 0.0 {
        final_score *= 0.5;
    }
    if abs(cpu_ratio - mem_ratio) < 0.1 {
        final_score *= 0.9;
    }
    final_score *= 1.0 + 0.05 * (weight_factor - 1.0);

    // Return the computed final score
    return final_score;
}
"#;

/// Composer output: trend-weighted dominant request type mapped to four
/// options. Elided refinement steps are filled with simple choices.
pub const COMPOSER_SELECTOR: &str = r#"fn type_keys() {
    ["small", "medium_small", "medium_medium", "medium_large", "large"]
}

fn calculate_stats(condition) {
    let stats = #{ averages: #{}, trends: #{}, accelerations: #{}, recent_changes: #{}, recent_accelerations: #{} };
    let n = condition.len();
    for k in type_keys() {
        let values = [];
        for group in condition {
            values.push(group[k]);
        }
        let trend = [];
        for i in 1..n {
            trend.push(values[i] - values[i - 1]);
        }
        let accel = [];
        for i in 1..trend.len() {
            accel.push(trend[i] - trend[i - 1]);
        }
        stats.averages[k] = mean(values);
        stats.trends[k] = trend;
        stats.accelerations[k] = accel;
        stats.recent_changes[k] = if trend.len() > 0 { trend[trend.len() - 1] } else { 0.0 };
        stats.recent_accelerations[k] = if accel.len() > 0 { accel[accel.len() - 1] } else { 0.0 };
    }
    stats
}

fn calculate_weighted_scores(condition, stats) {
    let weights = [0.25, 0.3, 0.3, 0.15];
    let last = condition[condition.len() - 1];
    let scores = #{};
    for k in type_keys() {
        scores[k] = weights[0] * stats.averages[k]
            + weights[1] * std(stats.trends[k]) / (mean(stats.trends[k]) + 1e-6)
            + weights[2] * last[k]
            + weights[3] * std(stats.accelerations[k]) / (mean(stats.accelerations[k]) + 1e-6);
    }
    scores
}

fn heuristic_selector(condition) {
    // Step 1: statistics
    let stats = calculate_stats(condition);
    // Step 2: weighted scores
    let scores = calculate_weighted_scores(condition, stats);

    // Step 3: dominant request type
    let dominant_request_type = "";
    let best = neg_inf();
    for k in type_keys() {
        if scores[k] > best {
            best = scores[k];
            dominant_request_type = k;
        }
    }
    let heuristic_map = #{ small: 1, medium_small: 2, medium_medium: 3, medium_large: 4, large: 4 };
    let selected_heuristic = heuristic_map[dominant_request_type] ?? 2;

    // Step 4: refinement rules
    if selected_heuristic == 4 && scores["medium_medium"] > scores["medium_small"] {
        selected_heuristic = 3;
    } else if selected_heuristic == 1 {
        if scores["small"] < 0.2 {
            selected_heuristic = 2;
        }
    }
    let large_trend = stats.trends["large"];
    if large_trend.len() > 0 && large_trend[large_trend.len() - 1] > mean(large_trend) + 1.4 * std(large_trend) {
        selected_heuristic = 4;
    }

    let change_energy = 0.0;
    let accel_energy = 0.0;
    for k in type_keys() {
        change_energy += stats.recent_changes[k] * stats.recent_changes[k];
        accel_energy += stats.recent_accelerations[k] * stats.recent_accelerations[k];
    }
    if change_energy > 1.2 * 5.0 {
        selected_heuristic = 2;
    }
    if accel_energy > 1.5 * 5.0 {
        selected_heuristic = 2;
    }

    let balanced = true;
    for k in type_keys() {
        if k != "large" && abs(scores[k] - scores["large"]) >= 0.1 {
            balanced = false;
        }
    }
    if balanced {
        selected_heuristic = 2;
    }

    if selected_heuristic < 1 || selected_heuristic > 4 {
        selected_heuristic = 2;
    }
    return selected_heuristic;
}
"#;

/// Tight-fit bonuses on residual bands.
pub const TIGHT_FIT: &str = r#"fn priority(bin, item) {
    if item[0] > bin[0] || item[1] > bin[1] {
        return neg_inf();
    }
    let cpu_remaining = bin[0] - item[0];
    let mem_remaining = bin[1] - item[1];
    let total_score = 0.0;
    // perfect fill
    if cpu_remaining == 0.0 && mem_remaining == 0.0 {
        total_score += 100.0;
    }
    // banded bonus for small leftover
    let remaining_percentage = if bin[0] + bin[1] > 0.0 { (cpu_remaining + mem_remaining) / (bin[0] + bin[1]) } else { 0.0 };
    if remaining_percentage < 0.25 {
        total_score += 10.0;
    } else if remaining_percentage < 0.5 {
        total_score += 5.0;
    }
    total_score - remaining_percentage
}
"#;

/// Weighted utilisation with imbalance-driven weights and threshold bands.
pub const WEIGHTED_SUM: &str = r#"fn priority(bin, item) {
    if item[0] > bin[0] || item[1] > bin[1] {
        return neg_inf();
    }
    let cpu_utilization = if bin[0] > 0.0 { item[0] / bin[0] } else { 1.0 };
    let mem_utilization = if bin[1] > 0.0 { item[1] / bin[1] } else { 1.0 };
    let cpu_remaining = bin[0] - item[0];
    let mem_remaining = bin[1] - item[1];
    let resource_imbalance = abs(cpu_utilization - mem_utilization);
    // dynamic weights
    let cpu_weight = if resource_imbalance < 0.1 { 0.5 } else if cpu_utilization < mem_utilization { 0.7 } else { 0.3 };
    let mem_weight = 1.0 - cpu_weight;
    // weighted sum
    let priority_score = (cpu_weight * cpu_utilization) + (mem_weight * mem_utilization);
    if resource_imbalance <= 0.1 {
        priority_score += 0.1;
    }
    // threshold bands
    if cpu_remaining < 0.1 * bin[0] || mem_remaining < 0.1 * bin[1] {
        priority_score -= 0.1;
    }
    priority_score
}
"#;

/// Slack counted against a ladder of relative thresholds.
pub const RELAXATION_CURVE: &str = r#"fn priority(bin, item) {
    if item[0] > bin[0] || item[1] > bin[1] {
        return neg_inf();
    }
    let bin_cpu = bin[0];
    let bin_mem = bin[1];
    let cpu_diff = bin_cpu - item[0];
    let mem_diff = bin_mem - item[1];
    let total = bin_cpu + bin_mem;
    if total == 0.0 {
        return 0.0;
    }
    let priority_weights = [0.05, 0.1, 0.15, 0.2, 0.25];
    let cpu_priority_factor = 0;
    let mem_priority_factor = 0;
    for w in priority_weights {
        if cpu_diff < w * bin_cpu { cpu_priority_factor += 1; }
        if mem_diff < w * bin_mem { mem_priority_factor += 1; }
    }
    let cpu_slack_penalty = 1.0 - (cpu_priority_factor / priority_weights.len().to_float());
    let mem_slack_penalty = 1.0 - (mem_priority_factor / priority_weights.len().to_float());
    let cpu_mem_diff_ratio = abs(cpu_diff - mem_diff) / total;
    let balance_bonus = 1.0 - cpu_mem_diff_ratio;
    let bin_fit_score = (cpu_diff + mem_diff) / total;
    // combined scoring: fit * balance * slack penalties
    -(bin_fit_score * balance_bonus * (cpu_slack_penalty + mem_slack_penalty))
}
"#;

/// Worst-fit: total residual after placement, unnormalised.
pub const SPREAD: &str = r#"fn priority(bin, item) {
    let s = 0.0;
    for i in 0..bin.len() {
        s += bin[i] - item[i];
    }
    s
}
"#;

/// Second option once the newest group is mostly large requests.
pub const REGIME_SELECTOR: &str = r#"fn heuristic_selector(condition) {
    let last = condition[condition.len() - 1];
    if last["large"] > 0.5 { 2 } else { 1 }
}
"#;

/// Every priority fixture with a short name.
pub const PRIORITY_FIXTURES: [(&str, &str); 6] = [
    ("seed", SEED_PRIORITY),
    ("miner", MINER_PRIORITY),
    ("tight_fit", TIGHT_FIT),
    ("weighted_sum", WEIGHTED_SUM),
    ("relaxation_curve", RELAXATION_CURVE),
    ("spread", SPREAD),
];

pub const SELECTOR_FIXTURES: [(&str, &str); 3] =
    [("seed", SEED_SELECTOR), ("composer", COMPOSER_SELECTOR), ("regime", REGIME_SELECTOR)];
