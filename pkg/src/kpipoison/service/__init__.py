"""HTTP front end for the detection gate."""
