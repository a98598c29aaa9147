"""
API Usage Examples
==================

This file shows how to drive the population protocol simulator from Python
instead of the ``popcount`` command.
"""


# Example 1: A single counting run
def example_single_run():
    """Run exact counting once and print its metrics."""
    from config import resolve_profile
    from core.engine import run
    from protocols.suite_base import get_protocol_registry

    suite = get_protocol_registry().create("count-exact", profile=resolve_profile("smoke"))
    metrics = run(suite, n=64, seed=1)

    print(f"correct: {metrics.correct}")
    print(f"converged at {metrics.t_convergence}, stable at {metrics.t_stabilization}")
    print(f"distinct states: {metrics.state_usage.distinct_composite_states}")


# Example 2: Stepping a simulation by hand
def example_manual_stepping():
    """Advance a broadcast until every agent has the bit."""
    from core.engine import Simulation
    from protocols.auxiliary import BroadcastSuite

    sim = Simulation(BroadcastSuite(), n=32, seed=7)
    sim.run_until(lambda s: all(s.outputs), max_interactions=100_000)
    print(f"all informed after {sim.t} interactions")


# Example 3: Watching the leader count
def example_leader_monitor():
    """Attach an observer to a fast election."""
    from config import resolve_profile
    from core.engine import run
    from core.observers import LeaderCountMonitor
    from protocols.auxiliary import FastLeaderSuite

    monitor = LeaderCountMonitor()
    run(FastLeaderSuite(profile=resolve_profile("smoke")), n=48, seed=2, observers=[monitor])
    print(f"fewest contenders seen: {monitor.min_count}")
    print(f"steps with no contender: {monitor.zero_leader_steps}")


# Example 4: A sweep with a fault and a report
def example_sweep_with_fault():
    """Lower k before verification and check that every run recovers."""
    from config import ExperimentSpec
    from core.harness import sweep
    from utils.report_generator import ReportGenerator

    spec = ExperimentSpec(protocol="approximate-stable", n_values=[32, 64], seeds=3,
                          profile="smoke", fault="corrupt-k:-3@pre-errordetect")
    result = sweep(spec)
    for aggregate in result.aggregates:
        print(f"n={aggregate.n}: success {aggregate.success_rate:.0%}, "
              f"median {aggregate.median_tc}")

    ReportGenerator("Fault recovery").emit(result, "html", "fault_recovery.html")
    print("HTML report generated: fault_recovery.html")


# Example 5: Fitting a complexity form
def example_complexity_fit():
    """Fit measured times against n log n."""
    from utils.statistics import fit_complexity

    fit = fit_complexity([(64, 2100.0), (128, 4900.0), (256, 11000.0)], "n log n")
    print(f"c = {fit.c:.3f}, ratio spread {fit.ratio_spread:.2f}")


# Example 6: Acceptance checks
def example_acceptance():
    """Run the deterministic acceptance criteria at the quick scale."""
    from core.acceptance import run_acceptance

    for result in run_acceptance('quick', only=[5, 6, 10]):
        print(result.summary())


# Main demonstration
if __name__ == '__main__':
    print("=" * 60)
    print("popcount - API Usage Examples")
    print("=" * 60)

    print("\nExample 1: Single Run")
    print("-" * 60)
    example_single_run()

    print("\nExample 2: Manual Stepping")
    print("-" * 60)
    example_manual_stepping()

    print("\nExample 5: Complexity Fit")
    print("-" * 60)
    example_complexity_fit()

    print("\n" + "=" * 60)
    print("The remaining examples run longer; call them directly")
    print("=" * 60)
