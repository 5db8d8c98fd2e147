// Minimal single-agent training run: a DQN-driven ACB factor on a small
// network, printing evaluation snapshots as training progresses.
#include <cstdio>

#include "rachforge/orchestrator.hpp"

using namespace rachforge;

int main() {
    SimSetup setup;
    setup.rach.traffic = {3.0, 4.0, 10, 120};

    TrainConfig tc;
    tc.budget_frames = 3000;
    tc.eval_every = 500;
    tc.eval_episodes = 5;
    tc.t_o = 5;
    tc.agent.net.gru = {16};
    tc.agent.net.dense = 16;
    tc.agent.lr = 3e-3;
    tc.agent.warmup = 200;

    Trainer trainer(setup, tc, trainer_spec_for(Scenario::acb_dqn), 42);
    std::printf("training acb-dqn for %lld frames...\n",
                static_cast<long long>(tc.budget_frames));
    const TrainOutcome out = trainer.train();
    for (const CurvePoint& p : out.curve)
        std::printf("  frames %6lld  eval mean V_s %.2f  mean reward %.4f\n",
                    static_cast<long long>(p.frames_trained), p.mean_vs, p.mean_reward);
    std::printf("final: mean V_s %.2f, mean delay %.2f frames, mean energy %.4f J\n",
                out.final_eval.mean_vs, out.final_eval.mean_delay,
                out.final_eval.mean_energy);
    return 0;
}
