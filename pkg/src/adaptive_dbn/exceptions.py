class DataError(ValueError):
    """Malformed or inconsistent input data (bad file, bad row, bad labels)."""


class DegeneratePartitionError(ValueError):
    """The parent model splits the focus data into an empty correct or wrong set."""

    def __init__(self, message, n_set0=0, n_set1=0, n_set2=0):
        super().__init__(message)
        self.n_set0 = n_set0
        self.n_set1 = n_set1
        self.n_set2 = n_set2
