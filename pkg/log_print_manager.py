from datetime import datetime
import logging

class log_print:
    def create_log_header(self, message, width=60):
        border = '-' * width
        return f"\n{border}\n{message.center(width)}\n{border}"

    def experiment_started(self, cfg):
        current_datetime = datetime.now()
        self._log_header("EXPERIMENT STARTED")
        self._log_lines([
            ("METHOD", cfg.method),
            ("MASTER SEED", cfg.rounds.seed),
            ("REPEATS", cfg.n_repeats),
            ("TRAIN / TEST CLIENTS", f"{cfg.task.n_clients} / {cfg.n_test_clients}"),
            ("TASK SHIFT", f"{cfg.task.shift} (label skew: {cfg.task.label_skew})"),
            ("MODULATION", cfg.arch.modulation_mode),
            ("ROUNDS", f"T={cfg.rounds.rounds} M={cfg.rounds.clients_per_round} S={cfg.rounds.pers_steps}"),
            ("OUTPUT", cfg.output_dir),
            ("TIMESTAMP", current_datetime),
        ])

    def repeat_finished(self, repeat, seed, test_accuracy, heterogeneity, counter):
        current_datetime = datetime.now()
        self._log_header(f"REPEAT {repeat} FINISHED")
        self._log_lines([
            ("RUN SEED", seed),
            ("TEST ACCURACY", f"{test_accuracy:.4f}"),
            ("LABEL HETEROGENEITY", f"{heterogeneity:.4f}"),
            ("ROUNDS COMPLETED", counter.get_rounds_completed()),
            ("CLIENT UPDATES", counter.get_client_updates()),
            ("TIMESTAMP", current_datetime),
        ])

    def final_summary(self, summary_rows, counter=None):
        current_datetime = datetime.now()
        self._log_header("FINAL EXPERIMENT SUMMARY")

        lines = [("TIMESTAMP", current_datetime)]
        for row in summary_rows:
            lines.append((f"{row.method} {row.metric}", f"{row.mean:.4f} +/- {row.std:.4f} (n={row.n_runs})"))
        if counter is not None:
            lines.extend([
                ("ROUNDS COMPLETED", counter.get_rounds_completed()),
                ("CLIENT UPDATES", counter.get_client_updates()),
                ("OPTIMIZER STEPS", counter.get_optimizer_steps()),
                ("EXAMPLES PROCESSED", counter.get_examples_processed()),
            ])
        self._log_lines(lines)

    # --- Internal Helper Methods ---
    def _log_header(self, message):
        logging.info(self.create_log_header(message))

    def _log_lines(self, kv_pairs):
        for label, value in kv_pairs:
            logging.info(f"{label:<22}: {value}")
