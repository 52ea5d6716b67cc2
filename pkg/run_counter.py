import logging


class RunCounter:
    def __init__(self):
        self.reset_all_counts()

    def reset_all_counts(self):
        self.rounds_completed = 0
        self.client_updates = 0
        self.optimizer_steps = 0
        self.examples_processed = 0

    # --- Rounds ---
    def get_rounds_completed(self):
        return self.rounds_completed

    def add_rounds_completed(self, count=1):
        self.rounds_completed += count
        logging.debug(f"RUN COUNTER: rounds completed {self.rounds_completed}")

    # --- Client updates ---
    def get_client_updates(self):
        return self.client_updates

    def add_client_updates(self, count=1):
        self.client_updates += count

    # --- Optimizer steps ---
    def get_optimizer_steps(self):
        return self.optimizer_steps

    def add_optimizer_steps(self, count=1):
        self.optimizer_steps += count

    # --- Examples ---
    def get_examples_processed(self):
        return self.examples_processed

    def add_examples_processed(self, count=1):
        self.examples_processed += count

    def merge(self, other: "RunCounter"):
        self.rounds_completed += other.rounds_completed
        self.client_updates += other.client_updates
        self.optimizer_steps += other.optimizer_steps
        self.examples_processed += other.examples_processed
